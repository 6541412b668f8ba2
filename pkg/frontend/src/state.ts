// Local UI state: the server snapshot plus per-row choice/send tracking.

import type { Metrics, PendingItem, SessionSnapshot } from './api.js';

export type SendState = 'suggested' | 'sending' | 'sent' | 'failed';

export interface QueueItem {
  sampleId: number;
  suggestedClass: number; // 1-based
  score: number;
  currentLabel: number[] | null;
  featurePreview: number[];
  chosenClass: number; // 1-based; defaults to the suggestion
  sendState: SendState;
}

export interface AppState {
  connected: boolean;
  session: SessionSnapshot | null;
  metrics: Metrics | null;
  queue: QueueItem[];
  advancing: boolean;
  annotator: string;
  message: string | null;
  messageKind: 'info' | 'error';
}

export function initialState(): AppState {
  return {
    connected: true,
    session: null,
    metrics: null,
    queue: [],
    advancing: false,
    annotator: 'ui-annotator',
    message: null,
    messageKind: 'info',
  };
}

export function queueFromPending(pending: PendingItem[]): QueueItem[] {
  return pending.map((item) => ({
    sampleId: item.sample_id,
    suggestedClass: item.suggested_class,
    score: item.score,
    currentLabel: item.current_label,
    featurePreview: item.feature_preview,
    chosenClass: item.suggested_class,
    sendState: 'suggested',
  }));
}
