/** JSON-over-HTTP client; every view in the app is fed exclusively by the
 * responses these calls return. */

import type {
  ActionRequest,
  ApiErrorPayload,
  BindingRow,
  Decision,
  DocumentView,
  EntityView,
  GraphPayload,
  QueryResult,
  ResolutionResult,
} from "./types.js";

export class ApiError extends Error {
  readonly code: string;
  readonly details: Record<string, unknown>;

  constructor(payload: ApiErrorPayload, readonly status: number) {
    super(payload.message);
    this.code = payload.code;
    this.details = payload.details ?? {};
  }
}

export interface ApiConfig {
  baseUrl: string;
  user: string;
  fetchImpl?: typeof fetch;
}

function query(params: Record<string, unknown>): string {
  const parts: string[] = [];
  for (const [key, value] of Object.entries(params)) {
    if (value === undefined || value === null) continue;
    const raw = typeof value === "string" ? value : JSON.stringify(value);
    parts.push(`${encodeURIComponent(key)}=${encodeURIComponent(raw)}`);
  }
  return parts.length ? `?${parts.join("&")}` : "";
}

export class ApiClient {
  private readonly fetchImpl: typeof fetch;

  constructor(private readonly config: ApiConfig) {
    this.fetchImpl = config.fetchImpl ?? fetch;
  }

  get user(): string {
    return this.config.user;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.config.baseUrl}${path}`, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = (await response.json()) as T & { error?: ApiErrorPayload };
    if (!response.ok) {
      throw new ApiError(
        payload.error ?? { code: "internal", message: `HTTP ${response.status}` },
        response.status,
      );
    }
    return payload;
  }

  health(): Promise<{ ok: boolean; role: string; iid: number }> {
    return this.request("GET", "/health");
  }

  listRequests(status = "open"): Promise<{ requests: ActionRequest[] }> {
    return this.request("GET", `/action-requests${query({ status })}`);
  }

  resolveRequest(requestId: string, decision: Decision, actor: string): Promise<ResolutionResult> {
    return this.request("POST", `/action-requests/${requestId}/resolution`, {
      decision,
      actor,
    });
  }

  globalBindings(globalId: string): Promise<{ global_id: string; bindings: BindingRow[] }> {
    return this.request("GET", `/entities/global/${globalId}/bindings`);
  }

  queryEntities(type: string, attributes: Record<string, unknown>): Promise<QueryResult> {
    return this.request(
      "GET",
      `/query/entities${query({ type, attributes, as_user: this.config.user })}`,
    );
  }

  pollPending(token: string): Promise<QueryResult & { hits?: unknown[] }> {
    return this.request("GET", `/query/pending/${token}`);
  }

  entityDetail(ref: number | string): Promise<EntityView> {
    return this.request("GET", `/entities/${ref}${query({ as_user: this.config.user })}`);
  }

  entityGraph(ref: number | string, depth: number): Promise<GraphPayload> {
    return this.request(
      "GET",
      `/entities/${ref}/graph${query({ as_user: this.config.user, depth })}`,
    );
  }

  document(docId: string): Promise<DocumentView> {
    return this.request("GET", `/documents/${docId}${query({ as_user: this.config.user })}`);
  }
}
