// Typed client over the control API. The dashboard may only issue the
// documented calls; the client enforces that itself so the contract test
// can simply record what goes over the wire.

import type {
  Cost,
  Directive,
  Escalation,
  Goal,
  GraphPayload,
  RunStatus,
  Task,
} from "./types.js";

export const DOCUMENTED_GET = [
  "/api/run",
  "/api/tasks",
  "/api/graph",
  "/api/goals",
  "/api/cost",
  "/api/escalations",
  "/api/directives",
  "/api/events",
  "/api/traces/",
] as const;

export const DOCUMENTED_POST = ["/api/directives", "/api/escalations/"] as const;

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

function documentedGet(path: string): boolean {
  return DOCUMENTED_GET.some((known) =>
    known.endsWith("/") ? path.startsWith(known) : path.split("?")[0] === known,
  );
}

function documentedPost(path: string): boolean {
  if (path === "/api/directives") return true;
  return /^\/api\/escalations\/[^/]+\/answer$/.test(path);
}

export class ApiClient {
  constructor(
    private fetchFn: FetchLike,
    private base = "",
  ) {}

  private async get<T>(path: string): Promise<T> {
    if (!documentedGet(path)) {
      throw new Error(`undocumented GET ${path}`);
    }
    const response = await this.fetchFn(this.base + path);
    if (!response.ok) throw new Error(`${path} -> ${response.status}`);
    return (await response.json()) as T;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    if (!documentedPost(path)) {
      throw new Error(`undocumented POST ${path}`);
    }
    const response = await this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) throw new Error(`${path} -> ${response.status}`);
    return (await response.json()) as T;
  }

  run(): Promise<RunStatus> {
    return this.get("/api/run");
  }

  tasks(): Promise<Task[]> {
    return this.get("/api/tasks");
  }

  graph(): Promise<GraphPayload> {
    return this.get("/api/graph");
  }

  goals(): Promise<Goal[]> {
    return this.get("/api/goals");
  }

  cost(): Promise<Cost> {
    return this.get("/api/cost");
  }

  escalations(): Promise<Escalation[]> {
    return this.get("/api/escalations");
  }

  directives(): Promise<Directive[]> {
    return this.get("/api/directives");
  }

  trace(conversationId: string): Promise<unknown> {
    return this.get(`/api/traces/${conversationId}`);
  }

  submitDirective(text: string): Promise<Directive> {
    return this.post("/api/directives", { text });
  }

  answerEscalation(id: string, text: string): Promise<Escalation> {
    return this.post(`/api/escalations/${id}/answer`, { text });
  }
}
