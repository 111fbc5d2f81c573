"""FastAPI application over a run's stores.

The app serves a live engine's stores when attached in-process (the
steering path: directives and escalation answers reach the engine at its
next boundary) or hydrates read-only stores from a run directory for
post-run inspection. `/api/events` is a server-sent-event stream of store
mutations tailed from the event logs, so it works in both setups; the
dashboard ships as static files mounted at the root.
"""

from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from fastapi.staticfiles import StaticFiles

from ..accounting import UsageMeter
from ..driver.inbox import DirectiveQueue, EscalationInbox
from ..driver.traces import TraceStore
from ..events import dump_canonical
from ..goals import GoalStore
from ..taskgraph import TaskStore
from .schemas import (
    AnswerRequest,
    CostModel,
    DirectiveModel,
    DirectiveRequest,
    EscalationModel,
    GoalModel,
    GraphPayload,
    RunStatus,
    TaskModel,
    TraceModel,
)

if TYPE_CHECKING:
    from ..driver.engine import Engine

EVENT_STREAMS = (
    "tasks.events.jsonl",
    "goals.events.jsonl",
    "merges.events.jsonl",
    "escalations.events.jsonl",
    "directives.events.jsonl",
    "usage.events.jsonl",
)


@dataclass
class RuntimeContext:
    run_dir: Path
    tasks: TaskStore
    goals: GoalStore
    meter: UsageMeter
    escalations: EscalationInbox
    directives: DirectiveQueue
    traces: TraceStore
    engine: "Engine | None" = None

    @property
    def state_dir(self) -> Path:
        return self.run_dir / "state"

    @classmethod
    def from_engine(cls, engine: "Engine") -> "RuntimeContext":
        return cls(
            run_dir=engine.config.run_dir,
            tasks=engine.tasks,
            goals=engine.goals,
            meter=engine.meter,
            escalations=engine.escalations,
            directives=engine.directives,
            traces=engine.traces,
            engine=engine,
        )

    @classmethod
    def from_run_dir(cls, run_dir: Path) -> "RuntimeContext":
        run_dir = Path(run_dir)
        state = run_dir / "state"
        return cls(
            run_dir=run_dir,
            tasks=TaskStore(state),
            goals=GoalStore(state),
            meter=UsageMeter(state),
            escalations=EscalationInbox(state),
            directives=DirectiveQueue(state),
            traces=TraceStore(state / "traces"),
        )

    def status(self) -> dict:
        if self.engine is not None:
            return self.engine.status_payload()
        summary = self.goals.progress_summary()
        return {
            "state": "detached",
            "mode": "inspect",
            "round": 0,
            "goals_completed": summary["counts"]["completed"],
            "goals_total": summary["total"],
            "open_escalations": self.escalations.open_count(),
            "queue_depth": 0,
            "effective_tokens": float(self.meter.total_effective_tokens()),
            "active_model_calls": 0,
            "active_tool_calls": 0,
        }


def create_app(context: RuntimeContext, ui_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="formforge control API", version="1")

    @app.get("/api/run", response_model=RunStatus)
    def run_status():
        return RunStatus(**context.status())

    @app.get("/api/tasks", response_model=list[TaskModel])
    def tasks():
        return [TaskModel(**t.to_payload()) for t in context.tasks.all_tasks()]

    @app.get("/api/graph", response_model=GraphPayload)
    def graph():
        return GraphPayload.model_validate(context.tasks.graph_view())

    @app.get("/api/goals", response_model=list[GoalModel])
    def goals():
        return [GoalModel(**g.to_payload()) for g in context.goals.all_goals()]

    @app.get("/api/cost", response_model=CostModel)
    def cost():
        return CostModel(**context.meter.aggregate().to_payload())

    @app.get("/api/escalations", response_model=list[EscalationModel])
    def escalations():
        return [EscalationModel(**e.to_payload()) for e in context.escalations.list()]

    @app.post("/api/escalations/{escalation_id}/answer", response_model=EscalationModel)
    def answer_escalation(escalation_id: str, body: AnswerRequest):
        try:
            escalation = context.escalations.answer(escalation_id, body.text)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown escalation")
        return EscalationModel(**escalation.to_payload())

    @app.get("/api/directives", response_model=list[DirectiveModel])
    def directives():
        return [DirectiveModel(**d.to_payload()) for d in context.directives.list()]

    @app.post("/api/directives", response_model=DirectiveModel)
    def submit_directive(body: DirectiveRequest):
        directive = context.directives.submit(body.text)
        return DirectiveModel(**directive.to_payload())

    @app.get("/api/traces/{conversation_id}", response_model=TraceModel)
    def trace(conversation_id: str):
        payload = context.traces.read(conversation_id)
        if payload is None:
            raise HTTPException(status_code=404, detail="unknown conversation")
        return TraceModel(**payload)

    @app.get("/api/events")
    async def events(
        limit: int = 0,
        timeout_s: float = 0.0,
        poll_s: float = 0.25,
        replay: bool = False,
    ):
        """Server-sent stream of store mutations, tailed from the event logs.

        `limit`/`timeout_s` bound the stream for polling clients and tests;
        `replay=true` starts from the beginning of the logs instead of the
        tail. The dashboard's EventSource leaves them unset (infinite live
        stream).
        """

        async def generate():
            cursors = {name: 0 for name in EVENT_STREAMS}
            if not replay:
                # Start from the current tail so clients see only new events.
                for name in EVENT_STREAMS:
                    path = context.state_dir / name
                    if path.exists():
                        cursors[name] = path.stat().st_size
            sent = 0
            elapsed = 0.0
            yield "event: ready\ndata: {}\n\n"
            while True:
                progressed = False
                for name in EVENT_STREAMS:
                    path = context.state_dir / name
                    if not path.exists():
                        continue
                    size = path.stat().st_size
                    if size <= cursors[name]:
                        continue
                    with path.open("r", encoding="utf-8") as fh:
                        fh.seek(cursors[name])
                        chunk = fh.read(size - cursors[name])
                    cursors[name] = size
                    for line in chunk.splitlines():
                        line = line.strip()
                        if not line:
                            continue
                        try:
                            record = json.loads(line)
                        except json.JSONDecodeError:
                            continue
                        record["stream"] = name.split(".")[0]
                        yield f"data: {dump_canonical(record)}\n\n"
                        sent += 1
                        progressed = True
                        if limit and sent >= limit:
                            return
                if not progressed:
                    await asyncio.sleep(poll_s)
                    elapsed += poll_s
                    if timeout_s and elapsed >= timeout_s:
                        return

        return StreamingResponse(generate(), media_type="text/event-stream")

    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
