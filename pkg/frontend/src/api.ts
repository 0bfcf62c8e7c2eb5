// Thin typed client over the session endpoints. The server is the single
// source of truth; every call returns its latest view of the state.

import type { CreateSessionRequest, PairPayload, StatusPayload } from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function request<T>(url: string, options?: RequestInit): Promise<T> {
  const response = await fetch(url, {
    ...options,
    headers: { "Content-Type": "application/json", ...options?.headers },
  });
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
  return response.json() as Promise<T>;
}

export class SessionApi {
  constructor(private baseUrl: string = "") {}

  createSession(config: CreateSessionRequest): Promise<StatusPayload> {
    return request(`${this.baseUrl}/api/sessions`, {
      method: "POST",
      body: JSON.stringify({ schema_version: 1, ...config }),
    });
  }

  status(sessionId: string): Promise<StatusPayload> {
    return request(`${this.baseUrl}/api/sessions/${sessionId}`);
  }

  nextQuery(sessionId: string): Promise<PairPayload> {
    return request(`${this.baseUrl}/api/sessions/${sessionId}/query`);
  }

  postPreference(sessionId: string, winner: "a" | "b", pairId: number): Promise<StatusPayload> {
    return request(`${this.baseUrl}/api/sessions/${sessionId}/preference`, {
      method: "POST",
      body: JSON.stringify({ schema_version: 1, winner, pair_id: pairId }),
    });
  }

  exportSession(sessionId: string): Promise<unknown> {
    return request(`${this.baseUrl}/api/sessions/${sessionId}/export`);
  }
}
