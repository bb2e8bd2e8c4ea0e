import type { DecisionBody, QueueResponse, TaskDetail, TaskSummary } from "./types.js";

// The server answered, but with an error status. Network-level failures
// (server unreachable) surface as the fetch rejection itself.
export class GatewayError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "GatewayError";
  }
}

async function errorMessage(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (typeof body?.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return `HTTP ${response.status}`;
  }
}

export class GatewayClient {
  constructor(private readonly baseUrl: string = "") {}

  private async requestJson<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, init);
    if (!response.ok) {
      throw new GatewayError(response.status, await errorMessage(response));
    }
    return (await response.json()) as T;
  }

  async queue(filter?: { kind?: string; status?: string }): Promise<TaskSummary[]> {
    const params = new URLSearchParams();
    if (filter?.kind) params.set("kind", filter.kind);
    if (filter?.status) params.set("status", filter.status);
    const qs = params.toString();
    const body = await this.requestJson<QueueResponse>(
      `/api/queue${qs ? `?${qs}` : ""}`,
    );
    return body.tasks;
  }

  async task(taskId: string): Promise<TaskDetail> {
    return this.requestJson<TaskDetail>(`/api/tasks/${taskId}`);
  }

  async decide(taskId: string, body: DecisionBody): Promise<TaskDetail> {
    return this.requestJson<TaskDetail>(`/api/tasks/${taskId}/decision`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  frameUrl(videoId: string, index: number): string {
    return `${this.baseUrl}/api/frames/${videoId}/${String(index).padStart(8, "0")}`;
  }

  storyboardUrl(videoId: string): string {
    return `${this.baseUrl}/api/storyboards/${videoId}`;
  }
}

// One token per decision intent: reusing it on a retry of the same intent
// lets the server deduplicate, so a double-submit records one decision.
export function makeToken(): string {
  const c = globalThis.crypto;
  if (c && typeof c.randomUUID === "function") return c.randomUUID();
  return `t-${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 10)}`;
}
