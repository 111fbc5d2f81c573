"""Escalations and user directives.

Both are event-sourced file queues so a dashboard served from another
process can steer a live run: answers and directives land in the logs, and
the engine picks them up at its next boundary (escalation answers attach to
the escalating task's next attempt when the conversation is gone; directives
are prepended to the orchestrator's next planning round, then marked
consumed).
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from ..clock import Clock, WallClock
from ..events import EventLog


class EscalationSeverity(str, Enum):
    INFO = "info"
    WARNING = "warning"
    CRITICAL = "critical"


class EscalationStatus(str, Enum):
    OPEN = "open"
    ANSWERED = "answered"
    DISMISSED = "dismissed"


@dataclass
class Escalation:
    id: str
    from_agent: str
    task_id: str
    severity: EscalationSeverity
    message: str
    status: EscalationStatus = EscalationStatus.OPEN
    response: str | None = None
    answer_consumed: bool = False

    def to_payload(self) -> dict:
        return {
            "id": self.id,
            "from_agent": self.from_agent,
            "task_id": self.task_id,
            "severity": self.severity.value,
            "message": self.message,
            "status": self.status.value,
            "response": self.response,
        }


class EscalationInbox:
    def __init__(self, state_dir: Path, clock: Clock | None = None) -> None:
        self.clock = clock or WallClock()
        self._log = EventLog(
            Path(state_dir) / "escalations.events.jsonl", clock=self.clock
        )
        self._lock = threading.RLock()
        self._items: dict[str, Escalation] = {}
        self._next_id = 1
        for record in self._log.read():
            self._apply(record["op"], record["payload"])

    def subscribe(self, callback) -> None:
        self._log.subscribe(callback)

    def _emit(self, op: str, payload: dict) -> None:
        self._log.append(op, payload)
        self._apply(op, payload)

    def _apply(self, op: str, payload: dict) -> None:
        if op == "escalation_filed":
            item = Escalation(
                id=payload["id"],
                from_agent=payload["from_agent"],
                task_id=payload["task_id"],
                severity=EscalationSeverity(payload["severity"]),
                message=payload["message"],
            )
            self._items[item.id] = item
            self._next_id = max(self._next_id, int(item.id.split("-")[-1]) + 1)
        elif op == "escalation_answered":
            item = self._items[payload["id"]]
            item.status = EscalationStatus.ANSWERED
            item.response = payload["response"]
        elif op == "escalation_dismissed":
            self._items[payload["id"]].status = EscalationStatus.DISMISSED
        else:
            raise ValueError(f"unknown escalation op: {op}")

    def file(
        self, from_agent: str, task_id: str, severity: str, message: str
    ) -> Escalation:
        with self._lock:
            escalation_id = f"esc-{self._next_id:04d}"
            self._emit(
                "escalation_filed",
                {
                    "id": escalation_id,
                    "from_agent": from_agent,
                    "task_id": task_id,
                    "severity": EscalationSeverity(severity).value,
                    "message": message,
                },
            )
            return self._items[escalation_id]

    def answer(self, escalation_id: str, response: str) -> Escalation:
        with self._lock:
            if escalation_id not in self._items:
                raise KeyError(f"unknown escalation {escalation_id}")
            self._emit(
                "escalation_answered", {"id": escalation_id, "response": response}
            )
            return self._items[escalation_id]

    def dismiss(self, escalation_id: str) -> None:
        with self._lock:
            if escalation_id not in self._items:
                raise KeyError(f"unknown escalation {escalation_id}")
            self._emit("escalation_dismissed", {"id": escalation_id})

    def list(self, status: EscalationStatus | None = None) -> list[Escalation]:
        with self._lock:
            items = sorted(self._items.values(), key=lambda e: e.id)
            if status is not None:
                items = [e for e in items if e.status is status]
            return items

    def open_count(self) -> int:
        return len(self.list(EscalationStatus.OPEN))

    def unconsumed_answers_for(self, task_id: str) -> list[Escalation]:
        with self._lock:
            return [
                e
                for e in self._items.values()
                if e.task_id == task_id
                and e.status is EscalationStatus.ANSWERED
                and not e.answer_consumed
            ]

    def mark_answer_consumed(self, escalation_id: str) -> None:
        # In-memory only: delivery bookkeeping, not durable state.
        with self._lock:
            self._items[escalation_id].answer_consumed = True


@dataclass
class Directive:
    id: str
    text: str
    submitted_at: float
    consumed_at: float | None = None

    def to_payload(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "submitted_at": self.submitted_at,
            "consumed_at": self.consumed_at,
        }


class DirectiveQueue:
    def __init__(self, state_dir: Path, clock: Clock | None = None) -> None:
        self.clock = clock or WallClock()
        self._log = EventLog(Path(state_dir) / "directives.events.jsonl", clock=self.clock)
        self._lock = threading.RLock()
        self._items: dict[str, Directive] = {}
        self._next_id = 1
        for record in self._log.read():
            self._apply(record["op"], record["payload"], record["ts"])

    def subscribe(self, callback) -> None:
        self._log.subscribe(callback)

    def _emit(self, op: str, payload: dict) -> None:
        record = self._log.append(op, payload)
        self._apply(op, payload, record["ts"])

    def _apply(self, op: str, payload: dict, ts: float) -> None:
        if op == "directive_submitted":
            item = Directive(id=payload["id"], text=payload["text"], submitted_at=ts)
            self._items[item.id] = item
            self._next_id = max(self._next_id, int(item.id.split("-")[-1]) + 1)
        elif op == "directive_consumed":
            self._items[payload["id"]].consumed_at = ts
        else:
            raise ValueError(f"unknown directive op: {op}")

    def submit(self, text: str) -> Directive:
        with self._lock:
            directive_id = f"dir-{self._next_id:04d}"
            self._emit("directive_submitted", {"id": directive_id, "text": text})
            return self._items[directive_id]

    def consume_pending(self) -> list[Directive]:
        """Return unconsumed directives in order and mark them consumed."""
        with self._lock:
            pending = sorted(
                (d for d in self._items.values() if d.consumed_at is None),
                key=lambda d: d.id,
            )
            for directive in pending:
                self._emit("directive_consumed", {"id": directive.id})
            return pending

    def list(self) -> list[Directive]:
        with self._lock:
            return sorted(self._items.values(), key=lambda d: d.id)
