// API payload shapes, mirroring the server's response models.

export interface RunStatus {
  state: string;
  mode: string;
  round: number;
  goals_completed: number;
  goals_total: number;
  open_escalations: number;
  queue_depth: number;
  effective_tokens: number;
  active_model_calls: number;
  active_tool_calls: number;
}

export interface Task {
  id: string;
  title: string;
  prompt: string;
  kind: string;
  status: string;
  dispatchable: boolean;
  dependencies: string[];
  priority: number;
  racing_width: number;
  attempt_count: number;
  origin: string;
  created_at: number;
  target_refs: string[];
  attempt_history: string[];
}

export interface GraphNode {
  id: string;
  title: string;
  kind: string;
  status: string;
  priority: number;
  attempt_count: number;
  target_refs: string[];
}

export interface GraphEdge {
  from: string;
  to: string;
}

export interface GraphPayload {
  nodes: GraphNode[];
  edges: GraphEdge[];
}

export interface RubricScore {
  rubric: string;
  score: number;
  reasoning: string;
}

export interface Verdict {
  target_id: string;
  gate_pass: boolean;
  match: {
    declaration_name: string | null;
    file: string | null;
    confidence: string;
    reasoning: string;
  };
  scores: RubricScore[];
  purity: { passed: boolean; offending: { axiom: string; chain: string[] }[] };
  passed: boolean;
  failure_reasons: string[];
  containment: number | null;
}

export interface Goal {
  target_id: string;
  status: string;
  last_matched_declaration: string | null;
  verdict_history: { eval_id: string; verdict: Verdict; ts: number }[];
}

export interface Cost {
  multipliers: Record<string, string>;
  small_tier_discount: string;
  total_effective_tokens: number;
  per_role: Record<string, { effective_tokens: number; share_percent: number }>;
  per_tier: Record<string, number>;
  event_count: number;
}

export interface Escalation {
  id: string;
  from_agent: string;
  task_id: string;
  severity: string;
  message: string;
  status: string;
  response: string | null;
}

export interface Directive {
  id: string;
  text: string;
  submitted_at: number;
  consumed_at: number | null;
}

export interface StoreEvent {
  stream: string;
  seq: number;
  ts: number;
  op: string;
  payload: unknown;
}
