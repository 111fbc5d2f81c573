"""Pydantic request/response models for the control API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class RunStatus(BaseModel):
    state: str
    mode: str
    round: int
    goals_completed: int
    goals_total: int
    open_escalations: int
    queue_depth: int
    effective_tokens: float
    active_model_calls: int
    active_tool_calls: int


class TaskModel(BaseModel):
    id: str
    title: str
    prompt: str
    kind: str
    status: str
    dispatchable: bool
    dependencies: list[str]
    priority: int
    racing_width: int
    attempt_count: int
    origin: str
    created_at: float
    target_refs: list[str]
    attempt_history: list[str]


class GraphNode(BaseModel):
    id: str
    title: str
    kind: str
    status: str
    priority: int
    attempt_count: int
    target_refs: list[str]


class GraphEdge(BaseModel):
    from_: str = Field(alias="from")
    to: str

    model_config = {"populate_by_name": True}


class GraphPayload(BaseModel):
    nodes: list[GraphNode]
    edges: list[GraphEdge]


class GoalModel(BaseModel):
    target_id: str
    status: str
    last_matched_declaration: str | None = None
    verdict_history: list[dict]


class CostRole(BaseModel):
    effective_tokens: float
    share_percent: float


class CostModel(BaseModel):
    multipliers: dict[str, str]
    small_tier_discount: str
    total_effective_tokens: float
    per_role: dict[str, CostRole]
    per_tier: dict[str, float]
    event_count: int


class EscalationModel(BaseModel):
    id: str
    from_agent: str
    task_id: str
    severity: str
    message: str
    status: str
    response: str | None = None


class AnswerRequest(BaseModel):
    text: str


class DirectiveRequest(BaseModel):
    text: str


class DirectiveModel(BaseModel):
    id: str
    text: str
    submitted_at: float
    consumed_at: float | None = None


class TraceModel(BaseModel):
    conversation_id: str
    agent_id: str
    role: str
    task_id: str
    parent: str | None = None
    status: str
    turn_count: int
    usage: dict
    messages: list[dict]
