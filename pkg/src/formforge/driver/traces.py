"""Persisted conversation transcripts and trace-analyzer reports.

Every agent conversation is written to `state/traces/<conversation_id>.json`
after each turn, so the trace analyzer, the inspect_trace tool, and the
dashboard can read full histories — including those of attempts whose
in-memory conversations were compacted or cancelled.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

from ..agents.runtime import AgentSession


@dataclass
class TraceReport:
    task_id: str
    status: str
    attempt_count: int
    summary: str
    suggestions: list[str] = field(default_factory=list)
    escalation_recommendation: str | None = None

    def __post_init__(self) -> None:
        self.suggestions = list(self.suggestions)[:3]

    def to_payload(self) -> dict:
        return {
            "task_id": self.task_id,
            "status": self.status,
            "attempt_count": self.attempt_count,
            "summary": self.summary,
            "suggestions": self.suggestions,
            "escalation_recommendation": self.escalation_recommendation,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "TraceReport":
        return cls(
            task_id=payload["task_id"],
            status=payload["status"],
            attempt_count=int(payload["attempt_count"]),
            summary=payload["summary"],
            suggestions=list(payload.get("suggestions", []))[:3],
            escalation_recommendation=payload.get("escalation_recommendation"),
        )


_ID_RE = re.compile(r"c-(\d+)\.json$")


class TraceStore:
    def __init__(self, traces_dir: Path) -> None:
        self.traces_dir = Path(traces_dir)
        self.traces_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        highest = 0
        for path in self.traces_dir.glob("c-*.json"):
            match = _ID_RE.search(path.name)
            if match:
                highest = max(highest, int(match.group(1)))
        self._next_id = highest + 1

    def new_conversation_id(self) -> str:
        with self._lock:
            conversation_id = f"c-{self._next_id:05d}"
            self._next_id += 1
            return conversation_id

    def write(self, session: AgentSession) -> None:
        payload = {
            "conversation_id": session.meta.get("conversation_id", session.agent_id),
            "agent_id": session.agent_id,
            "role": session.role.name.value,
            "task_id": session.meta.get("task_id", ""),
            "parent": session.meta.get("parent"),
            "status": session.conversation.status.value,
            "turn_count": session.conversation.turn_count,
            "usage": {
                "regular_input": session.conversation.usage_total.regular_input,
                "cache_read": session.conversation.usage_total.cache_read,
                "cache_write": session.conversation.usage_total.cache_write,
                "output": session.conversation.usage_total.output,
            },
            "messages": session.conversation.messages,
        }
        conversation_id = payload["conversation_id"]
        path = self.traces_dir / f"{conversation_id}.json"
        with self._lock:
            path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    def read(self, conversation_id: str) -> dict | None:
        path = self.traces_dir / f"{conversation_id}.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def list_ids(self) -> list[str]:
        return sorted(p.stem for p in self.traces_dir.glob("c-*.json"))

    def for_task(self, task_id: str) -> list[dict]:
        found = []
        for conversation_id in self.list_ids():
            payload = self.read(conversation_id)
            if payload and payload.get("task_id") == task_id:
                found.append(payload)
        return found
