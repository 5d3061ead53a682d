// Typed client for the validation service's HTTP API.

import type { RowEvent } from "./statusFold.js";

export interface RunHandle {
  run_id: string;
  state: "PENDING" | "RUNNING" | "DONE" | "FAILED";
  created_at: number;
  config: Record<string, unknown>;
  error: string | null;
}

export interface RunReport {
  status_counts: Record<string, number>;
  totals: {
    rows: number;
    final_records: number;
    time_total_s: number;
    latency_mean_s: number;
    cost_total: string;
    cost_warnings: string[];
    processing_failures: number;
  };
  [key: string]: unknown;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function expectJson(response: Response): Promise<any> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return response.json();
}

export async function* ndjsonLines(
  stream: ReadableStream<Uint8Array>
): AsyncGenerator<unknown> {
  const reader = stream.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  for (;;) {
    const { value, done } = await reader.read();
    if (done) break;
    buffer += decoder.decode(value, { stream: true });
    let newline = buffer.indexOf("\n");
    while (newline !== -1) {
      const line = buffer.slice(0, newline).trim();
      buffer = buffer.slice(newline + 1);
      if (line) yield JSON.parse(line);
      newline = buffer.indexOf("\n");
    }
  }
  const rest = buffer.trim();
  if (rest) yield JSON.parse(rest);
}

export class FactlineClient {
  constructor(private baseUrl: string = "") {}

  async createRun(
    file: Blob,
    fileName: string,
    config: Record<string, unknown>,
    providerKey?: string
  ): Promise<RunHandle> {
    const body = new FormData();
    body.append("file", file, fileName);
    body.append("config", JSON.stringify(config));
    const headers: Record<string, string> = {};
    if (providerKey) {
      // Write-only credential: sent per run, never stored client-side.
      headers["X-Provider-Key"] = providerKey;
    }
    const response = await fetch(`${this.baseUrl}/runs`, { method: "POST", body, headers });
    return expectJson(response);
  }

  async getRun(runId: string): Promise<RunHandle> {
    return expectJson(await fetch(`${this.baseUrl}/runs/${runId}`));
  }

  async listRuns(): Promise<{ runs: RunHandle[] }> {
    return expectJson(await fetch(`${this.baseUrl}/runs`));
  }

  async *streamEvents(runId: string): AsyncGenerator<RowEvent> {
    const response = await fetch(`${this.baseUrl}/runs/${runId}/events`);
    if (!response.ok || !response.body) {
      throw new ApiError(response.status, `event stream unavailable (${response.status})`);
    }
    for await (const doc of ndjsonLines(response.body)) {
      yield doc as RowEvent;
    }
  }

  resultUrl(runId: string): string {
    return `${this.baseUrl}/runs/${runId}/result`;
  }

  async getMetrics(runId: string): Promise<RunReport> {
    return expectJson(await fetch(`${this.baseUrl}/runs/${runId}/metrics`));
  }
}
