// Client-side view model: a mirror of the API payloads plus derived
// display values. Everything renders from what the server said; the one
// exception is the optimistic directive entry, which is reconciled away
// as soon as the server's list contains it.

import type {
  Cost,
  Directive,
  Escalation,
  Goal,
  GraphPayload,
  RunStatus,
  StoreEvent,
  Task,
} from "./types.js";

export type Connection = "connecting" | "live" | "polling";

export interface ViewModel {
  run: RunStatus | null;
  tasks: Task[];
  graph: GraphPayload;
  goals: Goal[];
  cost: Cost | null;
  escalations: Escalation[];
  directives: Directive[];
  optimisticDirectives: Directive[];
  connection: Connection;
}

export function emptyModel(): ViewModel {
  return {
    run: null,
    tasks: [],
    graph: { nodes: [], edges: [] },
    goals: [],
    cost: null,
    escalations: [],
    directives: [],
    optimisticDirectives: [],
    connection: "connecting",
  };
}

export interface MetricTiles {
  effectiveTokens: number;
  goalsCompleted: number;
  goalsTotal: number;
  openEscalations: number;
  queueDepth: number;
  activeAgents: number;
}

export function metricTiles(model: ViewModel): MetricTiles {
  const run = model.run;
  return {
    effectiveTokens: run?.effective_tokens ?? 0,
    goalsCompleted: run?.goals_completed ?? 0,
    goalsTotal: run?.goals_total ?? 0,
    openEscalations: run?.open_escalations ?? 0,
    queueDepth: run?.queue_depth ?? 0,
    activeAgents: (run?.active_model_calls ?? 0) + (run?.active_tool_calls ?? 0),
  };
}

export function applyRun(model: ViewModel, run: RunStatus): ViewModel {
  return { ...model, run };
}

export function applyTasks(model: ViewModel, tasks: Task[]): ViewModel {
  return { ...model, tasks };
}

export function applyGraph(model: ViewModel, graph: GraphPayload): ViewModel {
  return { ...model, graph };
}

export function applyGoals(model: ViewModel, goals: Goal[]): ViewModel {
  return { ...model, goals };
}

export function applyCost(model: ViewModel, cost: Cost): ViewModel {
  return { ...model, cost };
}

export function applyEscalations(
  model: ViewModel,
  escalations: Escalation[],
): ViewModel {
  return { ...model, escalations };
}

export function applyDirectives(
  model: ViewModel,
  directives: Directive[],
): ViewModel {
  const known = new Set(directives.map((d) => d.id));
  const texts = new Set(directives.map((d) => d.text));
  return {
    ...model,
    directives,
    optimisticDirectives: model.optimisticDirectives.filter(
      (d) => !known.has(d.id) && !texts.has(d.text),
    ),
  };
}

export function addOptimisticDirective(
  model: ViewModel,
  text: string,
): ViewModel {
  const entry: Directive = {
    id: `pending-${model.optimisticDirectives.length + 1}`,
    text,
    submitted_at: Date.now() / 1000,
    consumed_at: null,
  };
  return {
    ...model,
    optimisticDirectives: [...model.optimisticDirectives, entry],
  };
}

export function visibleDirectives(model: ViewModel): Directive[] {
  return [...model.directives, ...model.optimisticDirectives];
}

// Which API resources an event stream invalidates. The event payload is
// not interpreted beyond its stream name: the server stays the single
// source of truth and the dashboard just refetches the mirrors.
const STREAM_RESOURCES: Record<string, string[]> = {
  tasks: ["run", "tasks", "graph"],
  goals: ["run", "goals"],
  merges: ["run", "tasks", "graph"],
  escalations: ["run", "escalations"],
  directives: ["directives"],
  usage: ["run", "cost"],
};

export function resourcesInvalidatedBy(event: StoreEvent): string[] {
  return STREAM_RESOURCES[event.stream] ?? ["run"];
}
