// Typed client for the dafny-pilot engine service (HTTP+JSON, loopback).

export interface Diagnostic {
  severity: string;
  line: number;
  col: number;
  end_line: number;
  end_col: number;
  message: string;
  category: string;
  related: { line: number; col: number; message: string }[];
}

export interface CandidateCard {
  index: number;
  kind: string;
  display_code: string;
  diff: string;
}

export interface CreateSessionResponse {
  id: string;
  diagnostics: Diagnostic[];
}

export interface SuggestResponse {
  candidates: CandidateCard[];
  round: number;
  note?: string;
}

export interface AcceptResponse {
  diagnostics: Diagnostic[];
  verified: boolean;
  heuristics_applied: string[];
  axioms_inserted: number;
}

export interface RejectResponse {
  ok: boolean;
  next_round: number;
}

export interface EventRecord {
  seq: number;
  round: number;
  action: string;
  [key: string]: unknown;
}

export class ServiceError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class EngineApi {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let detail = `${response.status}`;
      try {
        const data = await response.json();
        if (data && data.detail) detail = String(data.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ServiceError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  createSession(source: string, task: string, path = "session.dfy"): Promise<CreateSessionResponse> {
    return this.request("POST", "/v1/sessions", { source, task, path });
  }

  suggest(sessionId: string): Promise<SuggestResponse> {
    return this.request("POST", `/v1/sessions/${sessionId}/suggest`);
  }

  accept(sessionId: string, index: number): Promise<AcceptResponse> {
    return this.request("POST", `/v1/sessions/${sessionId}/candidates/${index}/accept`);
  }

  reject(sessionId: string, index: number): Promise<RejectResponse> {
    return this.request("POST", `/v1/sessions/${sessionId}/candidates/${index}/reject`);
  }

  events(sessionId: string, since = 0): Promise<{ events: EventRecord[] }> {
    return this.request("GET", `/v1/sessions/${sessionId}/events?since=${since}`);
  }

  health(): Promise<{ name: string; engine_version: string }> {
    return this.request("GET", "/v1/health");
  }
}
