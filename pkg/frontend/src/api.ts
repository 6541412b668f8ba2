// Typed client for the annotation service API. Every number rendered by the
// UI originates from one of these responses.

export interface PendingItem {
  sample_id: number;
  suggested_class: number; // 1-based
  score: number;
  current_label: number[] | null;
  feature_preview: number[];
}

export interface F1Point {
  f1_val: number;
  f1_test: number;
}

export interface SessionSnapshot {
  round: number;
  status: 'initializing' | 'ready' | 'updating' | 'done' | 'failed';
  budget_remaining: number;
  strategy: string;
  num_classes: number;
  pending: PendingItem[];
  f1_history: F1Point[];
}

export interface Metrics {
  f1_val: number[];
  f1_test: number[];
}

export interface RoundReport {
  k: number;
  applied: { id: number; class: number }[];
  ties: number[];
  f1_val: number;
  f1_test: number;
}

export class ApiError extends Error {
  status: number;
  missing: number[];

  constructor(status: number, detail: string, missing: number[] = []) {
    super(detail);
    this.status = status;
    this.missing = missing;
  }
}

async function raise(response: Response): Promise<never> {
  let detail = `${response.status}`;
  let missing: number[] = [];
  try {
    const body = await response.json();
    if (body.detail) detail = String(body.detail);
    if (Array.isArray(body.missing)) missing = body.missing;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(response.status, detail, missing);
}

export class ApiClient {
  constructor(private base: string = '') {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async session(): Promise<SessionSnapshot> {
    const r = await fetch(this.url('/api/session'));
    if (!r.ok) await raise(r);
    return r.json();
  }

  async metrics(): Promise<Metrics> {
    const r = await fetch(this.url('/api/metrics'));
    if (!r.ok) await raise(r);
    return r.json();
  }

  async submitLabel(sampleId: number, classIndex: number, annotator: string): Promise<void> {
    const r = await fetch(this.url('/api/labels'), {
      method: 'POST',
      headers: {
        'Content-Type': 'application/json',
        'X-Annotator': annotator,
      },
      body: JSON.stringify({ sample_id: sampleId, class: classIndex }),
    });
    if (!r.ok) await raise(r);
  }

  async advance(round: number): Promise<RoundReport> {
    const r = await fetch(this.url('/api/round/advance'), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ round }),
    });
    if (!r.ok) await raise(r);
    return r.json();
  }
}
