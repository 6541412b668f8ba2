// DOM rendering. Full re-render per state change: the queue holds at most a
// handful of rows, so there is nothing to gain from diffing.

import type { AppState, QueueItem } from './state.js';

export interface Handlers {
  onChoose(item: QueueItem, classIndex: number): void;
  onAdvance(): void;
  onRefresh(): void;
  onAnnotatorChange(name: string): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function probabilityBars(probs: number[] | null): HTMLElement {
  const wrap = el('div', 'prob-bars');
  if (!probs) {
    wrap.appendChild(el('span', 'muted', 'cleaned'));
    return wrap;
  }
  probs.forEach((p, i) => {
    const row = el('div', 'prob-bar-row');
    row.appendChild(el('span', 'prob-bar-label', `${i + 1}`));
    const track = el('div', 'prob-bar-track');
    const fill = el('div', 'prob-bar-fill');
    fill.style.width = `${Math.round(p * 100)}%`;
    track.appendChild(fill);
    row.appendChild(track);
    row.appendChild(el('span', 'prob-bar-value', p.toFixed(2)));
    wrap.appendChild(row);
  });
  return wrap;
}

function queueRow(item: QueueItem, numClasses: number, disabled: boolean,
                  handlers: Handlers): HTMLElement {
  const row = el('div', 'queue-row');
  row.dataset.sampleId = String(item.sampleId);

  const head = el('div', 'queue-row-head');
  head.appendChild(el('span', 'sample-id', `#${item.sampleId}`));
  head.appendChild(el('span', 'score', `score ${item.score.toFixed(4)}`));
  head.appendChild(el('span', `send-state send-${item.sendState}`, item.sendState));
  row.appendChild(head);

  row.appendChild(probabilityBars(item.currentLabel));

  const preview = el('div', 'feature-preview',
    item.featurePreview.map((x) => x.toFixed(2)).join(', '));
  row.appendChild(preview);

  const picker = el('div', 'class-picker');
  for (let c = 1; c <= numClasses; c += 1) {
    const btn = el('button', 'class-btn', `${c}`);
    if (c === item.chosenClass) btn.classList.add('chosen');
    if (c === item.suggestedClass) btn.classList.add('suggested');
    btn.disabled = disabled;
    btn.addEventListener('click', () => handlers.onChoose(item, c));
    picker.appendChild(btn);
  }
  row.appendChild(picker);
  return row;
}

function f1Chart(values: number[], testValues: number[]): SVGSVGElement {
  const width = 320;
  const height = 90;
  const pad = 8;
  const svg = document.createElementNS('http://www.w3.org/2000/svg', 'svg');
  svg.setAttribute('viewBox', `0 0 ${width} ${height}`);
  svg.setAttribute('class', 'f1-chart');
  const scaleX = (i: number) =>
    values.length > 1 ? pad + (i * (width - 2 * pad)) / (values.length - 1) : width / 2;
  const scaleY = (v: number) => height - pad - v * (height - 2 * pad);
  for (const [series, cls] of [[values, 'f1-val'], [testValues, 'f1-test']] as const) {
    if (series.length > 1) {
      const line = document.createElementNS('http://www.w3.org/2000/svg', 'polyline');
      line.setAttribute('points',
        series.map((v, i) => `${scaleX(i)},${scaleY(v)}`).join(' '));
      line.setAttribute('class', `f1-line ${cls}`);
      svg.appendChild(line);
    }
    series.forEach((v, i) => {
      const dot = document.createElementNS('http://www.w3.org/2000/svg', 'circle');
      dot.setAttribute('cx', String(scaleX(i)));
      dot.setAttribute('cy', String(scaleY(v)));
      dot.setAttribute('r', '2.5');
      dot.setAttribute('class', `f1-point ${cls}`);
      svg.appendChild(dot);
    });
  }
  return svg;
}

export function render(root: HTMLElement, state: AppState, handlers: Handlers): void {
  root.textContent = '';

  if (!state.connected) {
    root.appendChild(el('div', 'banner offline', 'Server unreachable — retry once it is back.'));
  }
  if (state.message) {
    root.appendChild(el('div', `banner ${state.messageKind}`, state.message));
  }

  const session = state.session;
  if (!session) {
    root.appendChild(el('div', 'loading', 'Waiting for the session…'));
    return;
  }

  const header = el('div', 'header');
  header.appendChild(el('h1', undefined, 'Label cleaning'));
  header.appendChild(el('span', 'round-info',
    `round ${session.round} · budget left ${session.budget_remaining} · `
    + `strategy ${session.strategy} · ${session.status}`));
  const annotator = el('input', 'annotator-input') as HTMLInputElement;
  annotator.value = state.annotator;
  annotator.title = 'annotator identity (X-Annotator header)';
  annotator.addEventListener('change', () => handlers.onAnnotatorChange(annotator.value));
  header.appendChild(annotator);
  const refresh = el('button', 'refresh-btn', 'Refresh');
  refresh.addEventListener('click', handlers.onRefresh);
  header.appendChild(refresh);
  root.appendChild(header);

  const metrics = state.metrics;
  if (metrics && metrics.f1_val.length) {
    const panel = el('div', 'metrics-panel');
    panel.appendChild(el('span', 'metrics-label',
      `f1_val ${metrics.f1_val[metrics.f1_val.length - 1].toFixed(4)} · `
      + `f1_test ${metrics.f1_test[metrics.f1_test.length - 1].toFixed(4)}`));
    panel.appendChild(f1Chart(metrics.f1_val, metrics.f1_test));
    root.appendChild(panel);
  }

  const queue = el('div', 'queue');
  if (session.status === 'done') {
    queue.appendChild(el('div', 'done', 'Session finished — budget spent or target reached.'));
  } else if (state.queue.length === 0) {
    queue.appendChild(el('div', 'done', 'Round complete — nothing pending.'));
  } else {
    for (const item of state.queue) {
      queue.appendChild(queueRow(item, session.num_classes, state.advancing, handlers));
    }
  }
  root.appendChild(queue);

  const controls = el('div', 'controls');
  const advance = el('button', 'advance-btn',
    state.advancing ? 'Updating model…' : 'Accept & advance round (a)');
  advance.disabled = state.advancing || session.status !== 'ready'
    || state.queue.length === 0;
  advance.addEventListener('click', handlers.onAdvance);
  controls.appendChild(advance);
  root.appendChild(controls);
}
