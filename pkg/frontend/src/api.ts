// Typed client for the training service's JSON API.

export interface SnapshotInfo {
  epoch: number;
  accuracy: number;
  correction: { overall: number | null; sf_ut: number | null; uf_st: number | null };
  n_q: number;
  n_dq: number;
  n_dq_over_n_q: number;
  omega: number;
}

export interface PendingRound {
  round: number;
  pending: number;
  total: number;
}

export interface StatusInfo {
  epoch: number;
  phase: string;
  done: boolean;
  snapshot: SnapshotInfo | null;
  pending_round: PendingRound | null;
}

export interface QueryInfo {
  id: number;
  sample_id: number;
  p_false: number;
  direction: "descending" | "ascending";
  round: number;
  status: string;
  current_label: { p_stable: number; p_unstable: number };
}

export interface SamplePayload {
  id: number;
  shape: number[];
  values: number[];
}

export type LabelChoice = "stable" | "unstable";
export type SubmitResult = "ok" | "conflict" | "not-found" | "error";

export class ApiClient {
  constructor(private base: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(this.base + path);
    if (!resp.ok) {
      throw new Error(`GET ${path} failed: ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  async status(): Promise<StatusInfo> {
    return this.getJson<StatusInfo>("/api/status");
  }

  async pendingQueries(): Promise<QueryInfo[]> {
    const body = await this.getJson<{ queries: QueryInfo[] }>("/api/queries?state=pending");
    return body.queries;
  }

  async sample(id: number): Promise<SamplePayload> {
    return this.getJson<SamplePayload>(`/api/samples/${id}`);
  }

  async submitLabel(id: number, label: LabelChoice): Promise<SubmitResult> {
    const resp = await fetch(`${this.base}/api/queries/${id}/label`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ label }),
    });
    if (resp.ok) return "ok";
    if (resp.status === 409) return "conflict";
    if (resp.status === 404) return "not-found";
    return "error";
  }
}
