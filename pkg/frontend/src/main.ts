// Wiring: load the snapshot, render, and funnel every mutation through the
// API. Overriding a row's class submits immediately; the advance button (or
// the "a" key) accepts all remaining suggestions, so the default strategy-two
// flow is a single interaction.

import { ApiClient, ApiError } from './api.js';
import { AppState, QueueItem, initialState, queueFromPending } from './state.js';
import { Handlers, render } from './view.js';

export class App {
  state: AppState = initialState();

  constructor(private root: HTMLElement, private client: ApiClient) {}

  private draw(): void {
    render(this.root, this.state, this.handlers());
  }

  private setMessage(message: string | null, kind: 'info' | 'error' = 'info'): void {
    this.state.message = message;
    this.state.messageKind = kind;
  }

  async refresh(): Promise<void> {
    try {
      const [session, metrics] = await Promise.all([
        this.client.session(),
        this.client.metrics(),
      ]);
      this.state.connected = true;
      this.state.session = session;
      this.state.metrics = metrics;
      this.state.queue = queueFromPending(session.pending);
    } catch (err) {
      if (err instanceof ApiError && err.status === 503) {
        this.state.connected = true;
        this.setMessage('Session is initializing…');
      } else {
        this.state.connected = false;
      }
    }
    this.draw();
  }

  private async choose(item: QueueItem, classIndex: number): Promise<void> {
    item.chosenClass = classIndex;
    item.sendState = 'sending';
    this.draw();
    try {
      await this.client.submitLabel(item.sampleId, classIndex, this.state.annotator);
      item.sendState = 'sent';
      this.setMessage(null);
    } catch (err) {
      item.sendState = 'failed';
      if (err instanceof ApiError) {
        this.setMessage(`label rejected (${err.status}): ${err.message}`, 'error');
      } else {
        this.state.connected = false;
      }
    }
    this.draw();
  }

  private async advance(): Promise<void> {
    const session = this.state.session;
    if (!session || this.state.advancing) return;
    this.state.advancing = true;
    this.setMessage(null);
    this.draw();
    try {
      await this.client.advance(session.round);
    } catch (err) {
      if (err instanceof ApiError && err.status === 412) {
        this.setMessage(
          `annotations incomplete for samples: ${err.missing.join(', ')}`, 'error');
      } else if (err instanceof ApiError) {
        this.setMessage(`advance rejected (${err.status}): ${err.message}`, 'error');
      } else {
        this.state.connected = false;
      }
    }
    this.state.advancing = false;
    await this.refresh();
  }

  private handlers(): Handlers {
    return {
      onChoose: (item, classIndex) => void this.choose(item, classIndex),
      onAdvance: () => void this.advance(),
      onRefresh: () => void this.refresh(),
      onAnnotatorChange: (name) => {
        this.state.annotator = name || 'ui-annotator';
      },
    };
  }

  bindKeyboard(target: Document = document): void {
    target.addEventListener('keydown', (event) => {
      if (!this.root.isConnected) return; // stale instance (tests remount)
      const tag = (event.target as HTMLElement | null)?.tagName;
      if (tag === 'INPUT' || tag === 'TEXTAREA') return;
      if ((event as KeyboardEvent).key === 'a') {
        void this.advance();
      }
    });
  }

  async start(): Promise<void> {
    this.bindKeyboard();
    await this.refresh();
  }
}

export function boot(root: HTMLElement, base = ''): App {
  const app = new App(root, new ApiClient(base));
  void app.start();
  return app;
}

if (typeof document !== 'undefined') {
  const root = document.getElementById('app');
  if (root) boot(root);
}
