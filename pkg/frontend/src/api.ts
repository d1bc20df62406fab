import type {
  ExportPayload,
  QueueItem,
  RoundReport,
  StatusSnapshot,
  SubmitOutcome,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

/** Thin typed client over the service HTTP API; every view value the console
 * shows comes out of one of these responses. */
export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    let body: unknown = null;
    const text = await response.text();
    if (text) {
      try {
        body = JSON.parse(text);
      } catch {
        body = null;
      }
    }
    if (!response.ok) {
      const message =
        body && typeof body === "object" && "error" in body
          ? String((body as { error: unknown }).error)
          : `${response.status} ${response.statusText}`;
      throw new ApiError(response.status, message);
    }
    return body as T;
  }

  startRun(document: object): Promise<StatusSnapshot> {
    return this.request<StatusSnapshot>("/runs", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(document),
    });
  }

  getStatus(runId: string): Promise<StatusSnapshot> {
    return this.request<StatusSnapshot>(`/runs/${runId}`);
  }

  getQueue(runId: string): Promise<QueueItem[]> {
    return this.request<QueueItem[]>(`/runs/${runId}/queue`);
  }

  submitLabel(
    runId: string,
    pairId: string,
    y: 0 | 1,
    annotator: string,
  ): Promise<SubmitOutcome> {
    return this.request<SubmitOutcome>(`/runs/${runId}/labels`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ labels: [{ pair_id: pairId, y, annotator }] }),
    });
  }

  getReports(runId: string): Promise<RoundReport[]> {
    return this.request<RoundReport[]>(`/runs/${runId}/reports`);
  }

  getExport(runId: string): Promise<ExportPayload> {
    return this.request<ExportPayload>(`/runs/${runId}/export`);
  }
}
