"""Usage metering and the weighted effective-token compute metric.

Each backend completion is metered as one UsageEvent. Cost folds the four
token categories with fixed multipliers — regular input 1x, cache reads
0.1x, cache writes 1.25x, output 5x — and applies a 0.1 discount to the
small helper-model tier. Arithmetic is exact (fractions) internally and
rendered to two decimals in reports.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path

from .clock import Clock, WallClock
from .events import EventLog


class ModelTier(str, Enum):
    FLAGSHIP = "flagship"
    SMALL = "small"


MULTIPLIERS: dict[str, Fraction] = {
    "regular_input": Fraction(1),
    "cache_read": Fraction(1, 10),
    "cache_write": Fraction(5, 4),
    "output": Fraction(5),
}

SMALL_TIER_DISCOUNT = Fraction(1, 10)

# Report buckets for per-role aggregation.
ROLE_CATEGORIES: dict[str, str] = {
    "worker": "Workers",
    "reviewer": "Reviewers",
    "supervisor": "Supervisor",
    "merge_matcher": "Supervisor",
    "triage": "Supervisor",
    "orchestrator": "Orchestrator",
    "matcher": "Full Eval",
    "judge": "Full Eval",
    "reader": "Readers",
    "trace_analyzer": "Analyzers",
}


@dataclass(frozen=True)
class UsageEvent:
    agent_id: str
    role: str
    model_tier: ModelTier
    regular_input: int
    cache_read: int
    cache_write: int
    output: int
    ts: float = 0.0

    def __post_init__(self) -> None:
        for name in ("regular_input", "cache_read", "cache_write", "output"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_payload(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "role": self.role,
            "model_tier": self.model_tier.value,
            "regular_input": self.regular_input,
            "cache_read": self.cache_read,
            "cache_write": self.cache_write,
            "output": self.output,
            "ts": self.ts,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "UsageEvent":
        return cls(
            agent_id=payload["agent_id"],
            role=payload["role"],
            model_tier=ModelTier(payload["model_tier"]),
            regular_input=int(payload["regular_input"]),
            cache_read=int(payload["cache_read"]),
            cache_write=int(payload["cache_write"]),
            output=int(payload["output"]),
            ts=float(payload.get("ts", 0.0)),
        )


def effective_tokens(event: UsageEvent) -> Fraction:
    """Weighted compute cost of one usage event, exact."""
    base = (
        MULTIPLIERS["regular_input"] * event.regular_input
        + MULTIPLIERS["cache_read"] * event.cache_read
        + MULTIPLIERS["cache_write"] * event.cache_write
        + MULTIPLIERS["output"] * event.output
    )
    if event.model_tier is ModelTier.SMALL:
        base *= SMALL_TIER_DISCOUNT
    return base


@dataclass
class CostReport:
    total_effective_tokens: Fraction
    per_role: dict[str, dict]
    per_tier: dict[str, Fraction]
    event_count: int

    def to_payload(self) -> dict:
        return {
            "multipliers": {k: f"{float(v):g}x" for k, v in MULTIPLIERS.items()},
            "small_tier_discount": f"{float(SMALL_TIER_DISCOUNT):g}x",
            "total_effective_tokens": _render(self.total_effective_tokens),
            "per_role": {
                role: {
                    "effective_tokens": _render(entry["effective_tokens"]),
                    "share_percent": _render(entry["share_percent"]),
                }
                for role, entry in self.per_role.items()
            },
            "per_tier": {tier: _render(v) for tier, v in self.per_tier.items()},
            "event_count": self.event_count,
        }

    def render_text(self) -> str:
        lines = ["Compute cost report", "", "Token multipliers:"]
        for name, mult in MULTIPLIERS.items():
            lines.append(f"  {name:<14} {float(mult):g}x")
        lines.append(f"  small tier     {float(SMALL_TIER_DISCOUNT):g}x discount")
        lines.append("")
        lines.append(f"Events: {self.event_count}")
        lines.append(f"Total effective tokens: {_render(self.total_effective_tokens)}")
        lines.append("")
        lines.append(f"{'Category':<14}{'Effective':>16}{'Share':>10}")
        for role, entry in sorted(
            self.per_role.items(), key=lambda kv: -kv[1]["effective_tokens"]
        ):
            lines.append(
                f"{role:<14}{_render(entry['effective_tokens']):>16}"
                f"{_render(entry['share_percent']):>9}%"
            )
        return "\n".join(lines)


def _render(value: Fraction) -> float:
    return round(float(value), 2)


class UsageMeter:
    """Durable append-only usage ledger with aggregation."""

    def __init__(self, state_dir: Path, clock: Clock | None = None) -> None:
        self.clock = clock or WallClock()
        self._log = EventLog(Path(state_dir) / "usage.events.jsonl", clock=self.clock)
        self._lock = threading.Lock()
        self._events: list[UsageEvent] = [
            UsageEvent.from_payload(r["payload"]) for r in self._log.read()
        ]

    def subscribe(self, callback) -> None:
        self._log.subscribe(callback)

    def record(self, event: UsageEvent) -> None:
        if event.ts == 0.0:
            event = UsageEvent(
                agent_id=event.agent_id,
                role=event.role,
                model_tier=event.model_tier,
                regular_input=event.regular_input,
                cache_read=event.cache_read,
                cache_write=event.cache_write,
                output=event.output,
                ts=self.clock.now(),
            )
        with self._lock:
            self._log.append("usage", event.to_payload())
            self._events.append(event)

    def events(self) -> list[UsageEvent]:
        with self._lock:
            return list(self._events)

    def total_effective_tokens(self) -> Fraction:
        return sum((effective_tokens(e) for e in self.events()), Fraction(0))

    def aggregate(self) -> CostReport:
        events = self.events()
        total = Fraction(0)
        per_role: dict[str, Fraction] = {}
        per_tier: dict[str, Fraction] = {}
        for event in events:
            cost = effective_tokens(event)
            total += cost
            category = ROLE_CATEGORIES.get(event.role, event.role)
            per_role[category] = per_role.get(category, Fraction(0)) + cost
            per_tier[event.model_tier.value] = (
                per_tier.get(event.model_tier.value, Fraction(0)) + cost
            )
        role_entries = {
            role: {
                "effective_tokens": cost,
                "share_percent": (cost / total * 100) if total else Fraction(0),
            }
            for role, cost in per_role.items()
        }
        return CostReport(
            total_effective_tokens=total,
            per_role=role_entries,
            per_tier=per_tier,
            event_count=len(events),
        )
