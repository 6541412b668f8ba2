// Drives the real DOM app against a scripted in-memory server: render the
// queue, override a suggestion, advance rounds, surface errors.

import { afterEach, beforeEach, describe, expect, it, vi } from 'vitest';

import { App } from '../src/main.js';
import { ApiClient } from '../src/api.js';

interface FakeItem {
  sample_id: number;
  suggested_class: number;
  score: number;
  current_label: number[] | null;
  feature_preview: number[];
}

class FakeServer {
  round = 0;
  status = 'ready';
  f1 = [{ f1_val: 0.8, f1_test: 0.78 }];
  pendingByRound: FakeItem[][];
  submissions: { sample_id: number; class: number; annotator: string }[] = [];
  advanceBehavior: 'ok' | 'missing' | 'conflict' = 'ok';
  advanceDelay: Promise<void> | null = null;

  constructor(rounds: FakeItem[][]) {
    this.pendingByRound = rounds;
  }

  get pending(): FakeItem[] {
    return this.round < this.pendingByRound.length ? this.pendingByRound[this.round] : [];
  }

  snapshot() {
    const done = this.pending.length === 0;
    return {
      round: this.round,
      status: done ? 'done' : this.status,
      budget_remaining: 10 - 5 * this.round,
      strategy: 'two',
      num_classes: 2,
      pending: this.pending,
      f1_history: this.f1,
    };
  }

  fetch = async (url: string, init?: RequestInit): Promise<Response> => {
    const method = init?.method ?? 'GET';
    const json = (status: number, body: unknown) =>
      new Response(JSON.stringify(body), { status });
    if (url === '/api/session') return json(200, this.snapshot());
    if (url === '/api/metrics') {
      return json(200, {
        f1_val: this.f1.map((p) => p.f1_val),
        f1_test: this.f1.map((p) => p.f1_test),
      });
    }
    if (url === '/api/labels' && method === 'POST') {
      const body = JSON.parse(init!.body as string);
      const annotator = (init!.headers as Record<string, string>)['X-Annotator'];
      if (body.class > 2) return json(422, { detail: 'class must be in 1..2' });
      if (!this.pending.some((p) => p.sample_id === body.sample_id)) {
        return json(404, { detail: 'not pending' });
      }
      this.submissions.push({ ...body, annotator });
      return new Response(null, { status: 204 });
    }
    if (url === '/api/round/advance' && method === 'POST') {
      if (this.advanceDelay) await this.advanceDelay;
      if (this.advanceBehavior === 'missing') {
        return json(412, { detail: 'annotations incomplete', missing: [5, 6] });
      }
      if (this.advanceBehavior === 'conflict') {
        return json(409, { detail: 'round already advanced' });
      }
      this.round += 1;
      this.f1 = [...this.f1, { f1_val: 0.8 + 0.05 * this.round, f1_test: 0.78 }];
      return json(200, { k: this.round - 1 });
    }
    return json(404, { detail: `unhandled ${method} ${url}` });
  };
}

function items(ids: number[], suggested = 1): FakeItem[] {
  return ids.map((id, idx) => ({
    sample_id: id,
    suggested_class: suggested,
    score: -1 + 0.1 * idx, // ascending: API order must be preserved
    current_label: [0.7, 0.3],
    feature_preview: [0.5, -1.2],
  }));
}

function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

let root: HTMLElement;
let server: FakeServer;
let app: App;

async function mount(rounds: FakeItem[][]): Promise<void> {
  server = new FakeServer(rounds);
  vi.stubGlobal('fetch', server.fetch);
  root = document.createElement('div');
  document.body.appendChild(root);
  app = new App(root, new ApiClient());
  await app.start();
}

beforeEach(() => {
  document.body.textContent = '';
});

afterEach(() => {
  vi.unstubAllGlobals();
});

describe('queue rendering', () => {
  it('shows exactly the pending items in API order', async () => {
    await mount([items([11, 4, 9]), []]);
    const rows = root.querySelectorAll('.queue-row');
    expect(rows.length).toBe(3);
    expect([...rows].map((r) => (r as HTMLElement).dataset.sampleId))
      .toEqual(['11', '4', '9']);
  });

  it('defaults the chosen class to the suggestion', async () => {
    await mount([items([1], 2), []]);
    const chosen = root.querySelector('.class-btn.chosen')!;
    expect(chosen.textContent).toBe('2');
    expect(chosen.classList.contains('suggested')).toBe(true);
  });

  it('renders probability bars from the current label', async () => {
    await mount([items([1]), []]);
    const fills = root.querySelectorAll('.prob-bar-fill');
    expect(fills.length).toBe(2);
    expect((fills[0] as HTMLElement).style.width).toBe('70%');
  });

  it('shows the round-complete state when nothing is pending', async () => {
    await mount([[]]);
    expect(root.querySelector('.done')!.textContent).toContain('finished');
  });
});

describe('label override', () => {
  it('submits the override and marks the row sent', async () => {
    await mount([items([11, 4]), []]);
    const row = root.querySelector('[data-sample-id="4"]')!;
    (row.querySelectorAll('.class-btn')[1] as HTMLButtonElement).click();
    await flush();
    expect(server.submissions).toEqual([
      { sample_id: 4, class: 2, annotator: 'ui-annotator' },
    ]);
    const badge = root.querySelector('[data-sample-id="4"] .send-state')!;
    expect(badge.classList.contains('send-sent')).toBe(true);
  });

  it('surfaces a 422 inline and marks the row failed', async () => {
    await mount([items([11]), []]);
    server.fetch = async () =>
      new Response(JSON.stringify({ detail: 'class must be in 1..2' }), { status: 422 });
    vi.stubGlobal('fetch', server.fetch);
    (root.querySelector('.class-btn') as HTMLButtonElement).click();
    await flush();
    expect(root.querySelector('.banner.error')!.textContent).toContain('422');
    expect(root.querySelector('.send-state.send-failed')).not.toBeNull();
  });
});

describe('round advance', () => {
  it('advances, refreshes the queue, and extends the F1 chart', async () => {
    await mount([items([1, 2]), items([3]), []]);
    expect(root.querySelectorAll('.f1-point').length).toBe(2); // 1 point x 2 series
    (root.querySelector('.advance-btn') as HTMLButtonElement).click();
    await flush();
    await flush();
    const rows = root.querySelectorAll('.queue-row');
    expect(rows.length).toBe(1);
    expect((rows[0] as HTMLElement).dataset.sampleId).toBe('3');
    expect(root.querySelectorAll('.f1-point').length).toBe(4); // one more round
  });

  it('disables controls while the advance is in flight', async () => {
    await mount([items([1]), []]);
    let release: () => void = () => {};
    server.advanceDelay = new Promise((r) => { release = r; });
    (root.querySelector('.advance-btn') as HTMLButtonElement).click();
    await flush();
    expect((root.querySelector('.advance-btn') as HTMLButtonElement).disabled).toBe(true);
    expect((root.querySelector('.class-btn') as HTMLButtonElement).disabled).toBe(true);
    release();
    await flush();
    await flush();
    expect(root.querySelector('.done')).not.toBeNull();
  });

  it('lists the missing ids from a 412', async () => {
    await mount([items([1]), []]);
    server.advanceBehavior = 'missing';
    (root.querySelector('.advance-btn') as HTMLButtonElement).click();
    await flush();
    await flush();
    expect(root.querySelector('.banner.error')!.textContent).toContain('5, 6');
  });

  it('surfaces a 409 conflict', async () => {
    await mount([items([1]), []]);
    server.advanceBehavior = 'conflict';
    (root.querySelector('.advance-btn') as HTMLButtonElement).click();
    await flush();
    await flush();
    expect(root.querySelector('.banner.error')!.textContent).toContain('409');
  });

  it('accept-all-and-advance is reachable with a single keypress', async () => {
    await mount([items([1, 2]), []]);
    document.dispatchEvent(new KeyboardEvent('keydown', { key: 'a', bubbles: true }));
    await flush();
    await flush();
    expect(server.round).toBe(1);
    expect(root.querySelector('.done')).not.toBeNull();
  });
});

describe('connectivity', () => {
  it('shows the offline banner when the server is unreachable', async () => {
    vi.stubGlobal('fetch', async () => { throw new TypeError('network down'); });
    root = document.createElement('div');
    document.body.appendChild(root);
    app = new App(root, new ApiClient());
    await app.start();
    expect(root.querySelector('.banner.offline')).not.toBeNull();
  });

  it('shows an initializing note on 503', async () => {
    vi.stubGlobal('fetch', async () =>
      new Response(JSON.stringify({ detail: 'session is initializing' }), { status: 503 }));
    root = document.createElement('div');
    document.body.appendChild(root);
    app = new App(root, new ApiClient());
    await app.start();
    expect(root.textContent).toContain('initializing');
  });
});
