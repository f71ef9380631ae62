/**
 * Typed client for the view-discovery session API (/api/v1).
 * Every UI action maps 1:1 onto one of these calls; the client holds no
 * state beyond the base URL.
 */

export interface SessionStatus {
  session_id: string;
  stage: "searching" | "classifying" | "awaiting_choice" | "complete" | "failed";
  strategy: string;
  timings: Record<string, number>;
  counts: Record<string, number | null>;
  error: string | null;
  prompt_outstanding: boolean;
}

export interface ViewPayload {
  view_id: string;
  schema: string[];
  row_count: number;
  rows: string[][];
  page: number;
  page_size: number;
  provenance?: unknown;
  union_of?: string[];
}

export interface ViewsResponse {
  session_id: string;
  stage: string;
  views: ViewPayload[];
  pending: string[];
}

export interface PromptRow {
  row: string[];
  highlight: string[];
}

export interface PromptSide {
  view_id: string;
  schema: string[];
  rows: PromptRow[];
}

export interface PromptPayload {
  prompt_id: string;
  key_attribute: string | null;
  contradictory_keys: string[];
  degree: number;
  left: PromptSide;
  right: PromptSide;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  const body = await resp.text();
  if (!resp.ok) {
    let message = `HTTP ${resp.status}`;
    try {
      const doc = JSON.parse(body);
      if (doc.error) message = doc.error;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(resp.status, message);
  }
  return JSON.parse(body) as T;
}

export class ApiClient {
  constructor(private base: string = "") {}

  async createSession(body: {
    attributes: string[];
    tuples?: Record<string, string>[];
    strategy?: string;
  }): Promise<{ session_id: string }> {
    const resp = await fetch(`${this.base}/api/v1/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return asJson(resp);
  }

  async status(sessionId: string): Promise<SessionStatus> {
    return asJson(await fetch(`${this.base}/api/v1/sessions/${sessionId}`));
  }

  async views(sessionId: string, page = 0, pageSize = 50): Promise<ViewsResponse> {
    const url = `${this.base}/api/v1/sessions/${sessionId}/views?page=${page}&page_size=${pageSize}`;
    return asJson(await fetch(url));
  }

  async prompt(sessionId: string): Promise<PromptPayload | null> {
    const doc = await asJson<{ prompt: PromptPayload | null }>(
      await fetch(`${this.base}/api/v1/sessions/${sessionId}/prompt`),
    );
    return doc.prompt;
  }

  async choice(sessionId: string, promptId: string, choice: string): Promise<unknown> {
    const resp = await fetch(`${this.base}/api/v1/sessions/${sessionId}/choice`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ prompt_id: promptId, choice }),
    });
    return asJson(resp);
  }

  exportUrl(sessionId: string, viewId?: string): string {
    const suffix = viewId ? `?view_id=${encodeURIComponent(viewId)}` : "";
    return `${this.base}/api/v1/sessions/${sessionId}/export${suffix}`;
  }

  async exportCsv(sessionId: string, viewId?: string): Promise<string> {
    const resp = await fetch(this.exportUrl(sessionId, viewId));
    if (!resp.ok) throw new ApiError(resp.status, `export failed: ${resp.status}`);
    return resp.text();
  }

  async attributes(prefix: string): Promise<string[]> {
    const doc = await asJson<{ attributes: string[] }>(
      await fetch(`${this.base}/api/v1/attributes?q=${encodeURIComponent(prefix)}`),
    );
    return doc.attributes;
  }
}
