"""Persistent task DAG with a fixed status lifecycle and ready-set computation.

Tasks carry explicit dependency edges and move through
pending -> in_progress -> {completed, failed}, with failed tasks re-opened
(failed -> pending) when the planner rewrites them and deletion allowed from
any non-terminal state. The store is event-sourced: every mutation appends
one record to `state/tasks.events.jsonl` and replaying the log reconstructs
the exact store state.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable

from .clock import Clock, WallClock
from .events import EventLog, SnapshotFile


class TaskStatus(str, Enum):
    PENDING = "pending"
    IN_PROGRESS = "in_progress"
    COMPLETED = "completed"
    FAILED = "failed"
    DELETED = "deleted"


# Legal (from, to) pairs. completed and deleted are terminal.
_LEGAL_TRANSITIONS: frozenset[tuple[TaskStatus, TaskStatus]] = frozenset(
    {
        (TaskStatus.PENDING, TaskStatus.IN_PROGRESS),
        (TaskStatus.IN_PROGRESS, TaskStatus.COMPLETED),
        (TaskStatus.IN_PROGRESS, TaskStatus.FAILED),
        (TaskStatus.FAILED, TaskStatus.PENDING),
        (TaskStatus.PENDING, TaskStatus.DELETED),
        (TaskStatus.IN_PROGRESS, TaskStatus.DELETED),
        (TaskStatus.FAILED, TaskStatus.DELETED),
    }
)


def is_legal_transition(old: TaskStatus, new: TaskStatus) -> bool:
    return (old, new) in _LEGAL_TRANSITIONS


class TaskKind(str, Enum):
    FORMALIZE = "formalize"
    FIX = "fix"
    DECOMPOSE_HELPER = "decompose-helper"
    ANALYSIS = "analysis"


class TaskOrigin(str, Enum):
    ORCHESTRATOR = "orchestrator"
    TRIAGE = "triage"
    TRACE_ANALYZER = "trace-analyzer"
    USER = "user"


class AttemptOutcome(str, Enum):
    WON = "won"
    LOST_RACE = "lost_race"
    BUILD_FAILED = "build_failed"
    REVIEW_REJECTED = "review_rejected"
    ESCALATED = "escalated"
    CANCELLED = "cancelled"


class TaskGraphError(Exception):
    pass


class UnknownTask(TaskGraphError):
    def __init__(self, task_id: str) -> None:
        super().__init__(f"unknown task: {task_id}")
        self.task_id = task_id


class UnknownDependency(TaskGraphError):
    def __init__(self, task_id: str) -> None:
        super().__init__(f"dependency does not exist or is deleted: {task_id}")
        self.task_id = task_id


class CycleIntroduced(TaskGraphError):
    """Rejected edge set; carries one witness cycle as a list of task ids."""

    def __init__(self, cycle: list[str]) -> None:
        super().__init__("edge set would create a cycle: " + " -> ".join(cycle))
        self.cycle = cycle


class IllegalTransition(TaskGraphError):
    def __init__(self, old: TaskStatus, new: TaskStatus) -> None:
        super().__init__(f"illegal status transition: {old.value} -> {new.value}")
        self.old = old
        self.new = new


class WouldOrphanDependents(TaskGraphError):
    def __init__(self, task_id: str, dependents: list[str]) -> None:
        super().__init__(
            f"deleting {task_id} would orphan dependents: {', '.join(sorted(dependents))}"
        )
        self.dependents = sorted(dependents)


class NotInProgress(TaskGraphError):
    def __init__(self, task_id: str, status: TaskStatus) -> None:
        super().__init__(f"task {task_id} is {status.value}, not in_progress")


@dataclass
class TaskRecord:
    """One node in the work DAG."""

    id: str
    title: str
    prompt: str
    kind: TaskKind
    status: TaskStatus
    dispatchable: bool
    dependencies: frozenset[str]
    priority: int
    racing_width: int
    attempt_count: int
    origin: TaskOrigin
    created_at: float
    target_refs: frozenset[str]
    attempt_history: tuple[AttemptOutcome, ...] = ()

    def to_payload(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "prompt": self.prompt,
            "kind": self.kind.value,
            "status": self.status.value,
            "dispatchable": self.dispatchable,
            "dependencies": sorted(self.dependencies),
            "priority": self.priority,
            "racing_width": self.racing_width,
            "attempt_count": self.attempt_count,
            "origin": self.origin.value,
            "created_at": self.created_at,
            "target_refs": sorted(self.target_refs),
            "attempt_history": [o.value for o in self.attempt_history],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "TaskRecord":
        return cls(
            id=payload["id"],
            title=payload["title"],
            prompt=payload["prompt"],
            kind=TaskKind(payload["kind"]),
            status=TaskStatus(payload["status"]),
            dispatchable=bool(payload["dispatchable"]),
            dependencies=frozenset(payload["dependencies"]),
            priority=int(payload["priority"]),
            racing_width=int(payload["racing_width"]),
            attempt_count=int(payload["attempt_count"]),
            origin=TaskOrigin(payload["origin"]),
            created_at=float(payload["created_at"]),
            target_refs=frozenset(payload["target_refs"]),
            attempt_history=tuple(AttemptOutcome(o) for o in payload["attempt_history"]),
        )


# Fields update_task may patch. attempt_count moves only through record_attempt.
_MUTABLE_FIELDS = {
    "title",
    "prompt",
    "status",
    "dispatchable",
    "dependencies",
    "priority",
    "racing_width",
    "target_refs",
}


@dataclass
class TaskEvent:
    seq: int
    ts: float
    op: str
    payload: dict


class TaskStore:
    """Single logical owner of the task DAG; every operation is atomic.

    All mutations are serialized through one lock and appended to the event
    log before the call returns, so concurrent callers observe a linearizable
    history and a crashed process can rebuild the store by replay.
    """

    def __init__(
        self,
        state_dir: Path,
        clock: Clock | None = None,
        default_racing_width: int = 1,
    ) -> None:
        self.clock = clock or WallClock()
        state_dir = Path(state_dir)
        self._log = EventLog(state_dir / "tasks.events.jsonl", clock=self.clock)
        self._snapshot = SnapshotFile(state_dir / "tasks.snapshot.json")
        self._lock = threading.RLock()
        self._tasks: dict[str, TaskRecord] = {}
        self._next_id = 1
        self.default_racing_width = default_racing_width
        self._hydrate()

    # -- persistence ------------------------------------------------------

    def _hydrate(self) -> None:
        since = 0
        loaded = self._snapshot.load()
        if loaded is not None:
            state, since = loaded
            self._tasks = {
                tid: TaskRecord.from_payload(p) for tid, p in state["tasks"].items()
            }
            self._next_id = int(state["next_id"])
        for record in self._log.read(since_seq=since):
            self._apply(record["op"], record["payload"])

    def save_snapshot(self) -> None:
        with self._lock:
            state = {
                "tasks": {tid: t.to_payload() for tid, t in self._tasks.items()},
                "next_id": self._next_id,
            }
            self._snapshot.save(state, as_of_seq=self._log.next_seq - 1)

    def subscribe(self, callback) -> None:
        self._log.subscribe(callback)

    def _emit(self, op: str, payload: dict) -> None:
        self._log.append(op, payload)
        self._apply(op, payload)

    def _apply(self, op: str, payload: dict) -> None:
        if op == "task_added":
            record = TaskRecord.from_payload(payload)
            self._tasks[record.id] = record
            self._next_id = max(self._next_id, _numeric_suffix(record.id) + 1)
        elif op == "task_updated":
            task = self._tasks[payload["id"]]
            patch = dict(payload["patch"])
            if "status" in patch:
                patch["status"] = TaskStatus(patch["status"])
            if "dependencies" in patch:
                patch["dependencies"] = frozenset(patch["dependencies"])
            if "target_refs" in patch:
                patch["target_refs"] = frozenset(patch["target_refs"])
            self._tasks[task.id] = replace(task, **patch)
        elif op == "task_deleted":
            task = self._tasks[payload["id"]]
            self._tasks[task.id] = replace(task, status=TaskStatus.DELETED)
            for dep_id, new_deps in payload["rewired"].items():
                dependent = self._tasks[dep_id]
                self._tasks[dep_id] = replace(dependent, dependencies=frozenset(new_deps))
        elif op == "attempt_recorded":
            task = self._tasks[payload["id"]]
            outcome = AttemptOutcome(payload["outcome"])
            self._tasks[task.id] = replace(
                task,
                attempt_count=task.attempt_count + 1,
                attempt_history=task.attempt_history + (outcome,),
            )
        else:
            raise ValueError(f"unknown task event op: {op}")

    # -- graph helpers ----------------------------------------------------

    def _find_cycle(self, edges: dict[str, frozenset[str]]) -> list[str] | None:
        """DFS over the dependency edges; returns one witness cycle if any."""
        WHITE, GRAY, BLACK = 0, 1, 2
        color = {node: WHITE for node in edges}
        parent: dict[str, str] = {}

        for root in edges:
            if color[root] != WHITE:
                continue
            stack: list[tuple[str, Iterable[str]]] = [(root, iter(sorted(edges[root])))]
            color[root] = GRAY
            while stack:
                node, it = stack[-1]
                advanced = False
                for nxt in it:
                    if nxt not in edges:
                        continue
                    if color[nxt] == WHITE:
                        color[nxt] = GRAY
                        parent[nxt] = node
                        stack.append((nxt, iter(sorted(edges[nxt]))))
                        advanced = True
                        break
                    if color[nxt] == GRAY:
                        cycle = [nxt, node]
                        cur = node
                        while cur != nxt:
                            cur = parent[cur]
                            cycle.append(cur)
                        cycle.reverse()
                        return cycle
                if not advanced:
                    color[node] = BLACK
                    stack.pop()
        return None

    def _live_edges(self) -> dict[str, frozenset[str]]:
        return {
            tid: task.dependencies
            for tid, task in self._tasks.items()
            if task.status is not TaskStatus.DELETED
        }

    def _check_dependencies_exist(self, dependencies: Iterable[str]) -> None:
        for dep in dependencies:
            task = self._tasks.get(dep)
            if task is None or task.status is TaskStatus.DELETED:
                raise UnknownDependency(dep)

    # -- operations -------------------------------------------------------

    def add_task(
        self,
        title: str,
        prompt: str,
        kind: TaskKind = TaskKind.FORMALIZE,
        dependencies: Iterable[str] = (),
        priority: int = 0,
        racing_width: int | None = None,
        origin: TaskOrigin = TaskOrigin.ORCHESTRATOR,
        target_refs: Iterable[str] = (),
        dispatchable: bool = True,
    ) -> str:
        with self._lock:
            deps = frozenset(dependencies)
            self._check_dependencies_exist(deps)
            task_id = f"t-{self._next_id:04d}"
            edges = self._live_edges()
            edges[task_id] = deps
            cycle = self._find_cycle(edges)
            if cycle is not None:
                raise CycleIntroduced(cycle)
            record = TaskRecord(
                id=task_id,
                title=title,
                prompt=prompt,
                kind=kind,
                status=TaskStatus.PENDING,
                dispatchable=dispatchable,
                dependencies=deps,
                priority=priority,
                racing_width=racing_width or self.default_racing_width,
                attempt_count=0,
                origin=origin,
                created_at=self.clock.now(),
                target_refs=frozenset(target_refs),
            )
            self._emit("task_added", record.to_payload())
            return task_id

    def update_task(self, task_id: str, **patch) -> TaskRecord:
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None or task.status is TaskStatus.DELETED:
                raise UnknownTask(task_id)
            unknown = set(patch) - _MUTABLE_FIELDS
            if unknown:
                raise ValueError(f"non-patchable fields: {sorted(unknown)}")
            if "status" in patch:
                new_status = TaskStatus(patch["status"])
                if not is_legal_transition(task.status, new_status):
                    raise IllegalTransition(task.status, new_status)
                patch["status"] = new_status.value
            if "dependencies" in patch:
                deps = frozenset(patch["dependencies"])
                self._check_dependencies_exist(deps)
                edges = self._live_edges()
                edges[task_id] = deps
                cycle = self._find_cycle(edges)
                if cycle is not None:
                    raise CycleIntroduced(cycle)
                patch["dependencies"] = sorted(deps)
            if "target_refs" in patch:
                patch["target_refs"] = sorted(set(patch["target_refs"]))
            self._emit("task_updated", {"id": task_id, "patch": patch})
            return self._tasks[task_id]

    def delete_task(self, task_id: str, rewire: dict[str, Iterable[str]] | None = None) -> None:
        """Mark a task deleted, rewiring its dependents' edges via `rewire`.

        Every live dependent must appear in `rewire` with its replacement
        dependency set (which may drop the edge entirely); otherwise the
        delete is refused so the ready set cannot deadlock on a dead edge.
        """
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None or task.status is TaskStatus.DELETED:
                raise UnknownTask(task_id)
            rewire = {k: frozenset(v) for k, v in (rewire or {}).items()}
            dependents = [
                t.id
                for t in self._tasks.values()
                if task_id in t.dependencies and t.status is not TaskStatus.DELETED
            ]
            blocked = [d for d in dependents if d not in rewire]
            if blocked:
                raise WouldOrphanDependents(task_id, blocked)
            edges = self._live_edges()
            edges.pop(task_id)
            for dep_id, new_deps in rewire.items():
                if dep_id not in self._tasks:
                    raise UnknownTask(dep_id)
                if task_id in new_deps:
                    raise UnknownDependency(task_id)
                self._check_dependencies_exist(new_deps)
                edges[dep_id] = new_deps
            cycle = self._find_cycle(edges)
            if cycle is not None:
                raise CycleIntroduced(cycle)
            self._emit(
                "task_deleted",
                {
                    "id": task_id,
                    "rewired": {k: sorted(v) for k, v in rewire.items()},
                },
            )

    def ready_set(self) -> list[str]:
        """Pending, dispatchable tasks whose dependencies are all completed.

        Ordered by (priority desc, created_at asc, id asc) for deterministic
        dispatch.
        """
        with self._lock:
            ready = []
            for task in self._tasks.values():
                if task.status is not TaskStatus.PENDING or not task.dispatchable:
                    continue
                if all(
                    self._tasks[d].status is TaskStatus.COMPLETED for d in task.dependencies
                ):
                    ready.append(task)
            ready.sort(key=lambda t: (-t.priority, t.created_at, t.id))
            return [t.id for t in ready]

    def record_attempt(self, task_id: str, outcome: AttemptOutcome) -> None:
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None:
                raise UnknownTask(task_id)
            if task.status is not TaskStatus.IN_PROGRESS:
                raise NotInProgress(task_id, task.status)
            self._emit("attempt_recorded", {"id": task_id, "outcome": outcome.value})

    # -- queries ----------------------------------------------------------

    def get(self, task_id: str) -> TaskRecord:
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None:
                raise UnknownTask(task_id)
            return task

    def exists(self, task_id: str) -> bool:
        with self._lock:
            return task_id in self._tasks

    def all_tasks(self) -> list[TaskRecord]:
        with self._lock:
            return sorted(self._tasks.values(), key=lambda t: t.id)

    def live_tasks(self) -> list[TaskRecord]:
        return [t for t in self.all_tasks() if t.status is not TaskStatus.DELETED]

    def counts_by_status(self) -> dict[str, int]:
        counts: dict[str, int] = {status.value: 0 for status in TaskStatus}
        for task in self.all_tasks():
            counts[task.status.value] += 1
        return counts

    def graph_view(self) -> dict:
        """Nodes and dependency edges for the API/dashboard graph payload."""
        tasks = self.live_tasks()
        nodes = [
            {
                "id": t.id,
                "title": t.title,
                "kind": t.kind.value,
                "status": t.status.value,
                "priority": t.priority,
                "attempt_count": t.attempt_count,
                "target_refs": sorted(t.target_refs),
            }
            for t in tasks
        ]
        edges = [
            {"from": t.id, "to": dep}
            for t in tasks
            for dep in sorted(t.dependencies)
        ]
        return {"nodes": nodes, "edges": edges}


def _numeric_suffix(task_id: str) -> int:
    try:
        return int(task_id.rsplit("-", 1)[-1])
    except ValueError:
        return 0
