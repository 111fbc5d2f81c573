"""Target-level feedback: goal tracker, post-merge evaluation, and triage.

The goal tracker records each target statement's status (pending,
completed, or failed) independently of the task DAG; status is always the
outcome of the most recent evaluation verdict, so a later merge that breaks
a previously completed target regresses it with both verdicts kept in
history. After every merge batch the supervisor maps the diff to affected
targets with a merge-matcher agent (widened by dependency-cone
intersection), re-evaluates them in a throwaway worktree at the new main
head, and hands failures to a triage agent that emits granular fix tasks.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .agents.protocol import MalformedPayload
from .agents.runtime import request_json_payload
from .clock import Clock, WallClock
from .depgraph import DepGraph
from .evaluation import (
    EvaluationHarness,
    EvaluationReport,
    TargetStatement,
    TargetVerdict,
    write_verdicts,
)
from .events import EventLog, SnapshotFile
from .taskgraph import TaskKind, TaskOrigin, TaskStore
from .vcs import Workspace


class GoalStatus(str, Enum):
    PENDING = "pending"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class GoalRecord:
    target_id: str
    status: GoalStatus = GoalStatus.PENDING
    verdict_history: list[dict] = field(default_factory=list)
    last_matched_declaration: str | None = None

    def to_payload(self) -> dict:
        return {
            "target_id": self.target_id,
            "status": self.status.value,
            "verdict_history": list(self.verdict_history),
            "last_matched_declaration": self.last_matched_declaration,
        }


class GoalStore:
    """Event-sourced target status store; status is a pure function of the
    verdict history."""

    def __init__(self, state_dir: Path, clock: Clock | None = None) -> None:
        self.clock = clock or WallClock()
        state_dir = Path(state_dir)
        self._log = EventLog(state_dir / "goals.events.jsonl", clock=self.clock)
        self._snapshot = SnapshotFile(state_dir / "goals.json")
        self._lock = threading.RLock()
        self._goals: dict[str, GoalRecord] = {}
        # (ts, completed count) after every verdict; non-decreasing in the
        # count except where a regression was recorded.
        self._completion_curve: list[tuple[float, int]] = []
        for record in self._log.read():
            self._apply(record["op"], record["payload"], record["ts"])

    def subscribe(self, callback) -> None:
        self._log.subscribe(callback)

    def _emit(self, op: str, payload: dict) -> None:
        record = self._log.append(op, payload)
        self._apply(op, payload, record["ts"])

    def _apply(self, op: str, payload: dict, ts: float) -> None:
        if op == "target_registered":
            tid = payload["target_id"]
            self._goals.setdefault(tid, GoalRecord(target_id=tid))
        elif op == "verdict_recorded":
            goal = self._goals.setdefault(
                payload["target_id"], GoalRecord(target_id=payload["target_id"])
            )
            goal.verdict_history.append(
                {"eval_id": payload["eval_id"], "verdict": payload["verdict"], "ts": ts}
            )
            goal.status = (
                GoalStatus.COMPLETED if payload["verdict"]["passed"] else GoalStatus.FAILED
            )
            matched = payload["verdict"].get("match", {}).get("declaration_name")
            if matched:
                goal.last_matched_declaration = matched
            completed = sum(
                1 for g in self._goals.values() if g.status is GoalStatus.COMPLETED
            )
            self._completion_curve.append((ts, completed))
        else:
            raise ValueError(f"unknown goal event op: {op}")

    def register_targets(self, target_ids: list[str]) -> None:
        with self._lock:
            for tid in target_ids:
                if tid not in self._goals:
                    self._emit("target_registered", {"target_id": tid})

    def record_verdict(self, eval_id: str, verdict: TargetVerdict) -> None:
        with self._lock:
            self._emit(
                "verdict_recorded",
                {
                    "target_id": verdict.target_id,
                    "eval_id": eval_id,
                    "verdict": verdict.to_payload(),
                },
            )

    def get(self, target_id: str) -> GoalRecord:
        with self._lock:
            return self._goals[target_id]

    def all_goals(self) -> list[GoalRecord]:
        with self._lock:
            return sorted(self._goals.values(), key=lambda g: g.target_id)

    def save_snapshot(self) -> None:
        with self._lock:
            self._snapshot.save(
                {"goals": {g.target_id: g.to_payload() for g in self._goals.values()}},
                as_of_seq=self._log.next_seq - 1,
            )

    def progress_summary(self) -> dict:
        with self._lock:
            counts = {status.value: 0 for status in GoalStatus}
            per_target = {}
            for goal in self._goals.values():
                counts[goal.status.value] += 1
                per_target[goal.target_id] = goal.status.value
            return {
                "total": len(self._goals),
                "counts": counts,
                "per_target": dict(sorted(per_target.items())),
                "completion_curve": [
                    {"ts": ts, "completed": completed}
                    for ts, completed in self._completion_curve
                ],
            }

    def completed_count(self) -> int:
        with self._lock:
            return sum(
                1 for g in self._goals.values() if g.status is GoalStatus.COMPLETED
            )


@dataclass
class SupervisionOutcome:
    eval_id: str
    affected_targets: list[str]
    report: EvaluationReport | None
    fix_tasks: list[str]
    matcher_fallback: bool = False
    eval_worktree: str = ""


class Supervisor:
    """Per-merge impact analysis and evaluation dispatch.

    One instance; on_merge calls are serialized in merge order by the engine.
    """

    def __init__(
        self,
        goals: GoalStore,
        tasks: TaskStore,
        workspace: Workspace,
        harness: EvaluationHarness,
        agent_factory,
        exporter,
        targets: list[TargetStatement],
        state_dir: Path,
        max_fix_tasks_per_target: int = 4,
    ) -> None:
        self.goals = goals
        self.tasks = tasks
        self.workspace = workspace
        self.harness = harness
        self.agent_factory = agent_factory
        self.exporter = exporter
        self.targets = {t.id: t for t in targets}
        self.state_dir = Path(state_dir)
        self.max_fix_tasks_per_target = max_fix_tasks_per_target
        self._eval_counter = 0
        self._lock = threading.Lock()

    def _next_eval_id(self) -> str:
        with self._lock:
            self._eval_counter += 1
            return f"eval-{self._eval_counter:04d}"

    # -- affected-target analysis ------------------------------------------------

    def _match_affected(
        self, landed_task_ids: list[str], changed_files: list[str]
    ) -> tuple[list[str], bool]:
        """Merge-matcher agent first; conservative task-ref fallback."""
        target_ids = sorted(self.targets)
        refs_by_task = {}
        for task_id in landed_task_ids:
            if self.tasks.exists(task_id):
                refs_by_task[task_id] = sorted(self.tasks.get(task_id).target_refs)
        session = self.agent_factory(
            "merge_matcher",
            sandbox_root=self.workspace.repo_dir,
            meta={
                "changed_files": changed_files,
                "landed_task_ids": landed_task_ids,
                "target_refs_by_task": refs_by_task,
            },
        )
        numbered = "\n".join(f"{i}: {tid}" for i, tid in enumerate(target_ids))
        prompt = (
            "A merge just landed. Determine which targets it affects by "
            "inspecting the changed files. Answer with JSON "
            '{"affected": [<target ids>], "reasoning": "..."}.\n\n'
            f"Changed files:\n{chr(10).join(changed_files)}\n\nTargets:\n{numbered}"
        )
        try:
            payload = request_json_payload(session, prompt, required={"affected": list})
            affected = [t for t in payload["affected"] if t in self.targets]
            return affected, False
        except MalformedPayload:
            fallback: set[str] = set()
            for refs in refs_by_task.values():
                fallback.update(r for r in refs if r in self.targets)
            return sorted(fallback), True

    def _expand_via_cones(
        self, affected: list[str], changed_files: list[str], graph: DepGraph
    ) -> list[str]:
        """A changed helper can break targets whose files the diff never
        touched; widen by dependency-cone intersection."""
        changed_decls = graph.declarations_in_files(set(changed_files))
        if not changed_decls:
            return affected
        expanded = set(affected)
        for goal in self.goals.all_goals():
            decl = goal.last_matched_declaration
            if decl is None or decl not in graph.declarations:
                continue
            cone = graph.dependency_cone(decl) | {decl}
            if cone & changed_decls:
                expanded.add(goal.target_id)
        return sorted(t for t in expanded if t in self.targets)

    # -- the per-merge loop ----------------------------------------------------------

    def on_merge(self, landed_task_ids: list[str], old_head: str, new_head: str) -> SupervisionOutcome:
        changed_files = self.workspace.changed_files(old_head, new_head)
        if not changed_files:
            return SupervisionOutcome(
                eval_id="", affected_targets=[], report=None, fix_tasks=[]
            )
        eval_id = self._next_eval_id()
        affected, fallback = self._match_affected(landed_task_ids, changed_files)
        outcome = self._evaluate_affected(eval_id, affected, changed_files)
        outcome.matcher_fallback = fallback
        return outcome

    def catch_up(self, target_ids: list[str]) -> SupervisionOutcome:
        """Evaluate targets whose landed merges were never supervised (crash
        recovery path)."""
        affected = sorted(t for t in set(target_ids) if t in self.targets)
        if not affected:
            return SupervisionOutcome(
                eval_id="", affected_targets=[], report=None, fix_tasks=[]
            )
        return self._evaluate_affected(self._next_eval_id(), affected, [])

    def _known_matches(self) -> dict[str, str]:
        return {
            goal.target_id: goal.last_matched_declaration
            for goal in self.goals.all_goals()
            if goal.last_matched_declaration is not None
        }

    def _evaluate_affected(
        self, eval_id: str, affected: list[str], changed_files: list[str]
    ) -> SupervisionOutcome:
        handle = self.workspace.create_worktree("eval")
        try:
            graph = DepGraph.from_document(self.exporter(handle.path), permissive=True)
            if changed_files:
                affected = self._expand_via_cones(affected, changed_files, graph)
            targets = [self.targets[t] for t in affected]
            report = None
            fix_tasks: list[str] = []
            if targets:
                report = self.harness.evaluate_targets(
                    targets, handle.path, graph, eval_id=eval_id,
                    all_targets=list(self.targets.values()),
                    known_matches=self._known_matches(),
                )
                write_verdicts(report, self.state_dir)
                for verdict in report.verdicts:
                    self.goals.record_verdict(eval_id, verdict)
                    if not verdict.passed:
                        fix_tasks.extend(self.triage(verdict))
            return SupervisionOutcome(
                eval_id=eval_id,
                affected_targets=affected,
                report=report,
                fix_tasks=fix_tasks,
                eval_worktree=str(handle.path),
            )
        finally:
            self.workspace.cleanup(handle)

    def full_evaluation(self, eval_id: str | None = None) -> EvaluationReport:
        """Evaluate every target at the current main head (final reporting)."""
        eval_id = eval_id or self._next_eval_id()
        handle = self.workspace.create_worktree("eval")
        try:
            graph = DepGraph.from_document(self.exporter(handle.path), permissive=True)
            report = self.harness.evaluate_targets(
                list(self.targets.values()), handle.path, graph, eval_id=eval_id,
                known_matches=self._known_matches(),
            )
            write_verdicts(report, self.state_dir)
            for verdict in report.verdicts:
                self.goals.record_verdict(eval_id, verdict)
            return report
        finally:
            self.workspace.cleanup(handle)

    # -- triage ---------------------------------------------------------------------

    def triage(self, verdict: TargetVerdict) -> list[str]:
        """Convert one failed verdict into granular fix tasks (one per cause).

        Falls back to a single coarse fix task if the triage agent fails.
        """
        target = self.targets[verdict.target_id]
        session = self.agent_factory(
            "triage",
            sandbox_root=self.workspace.repo_dir,
            meta={"target_id": verdict.target_id,
                  "failure_reasons": list(verdict.failure_reasons)},
        )
        reasons = "\n".join(f"- {r}" for r in verdict.failure_reasons)
        prompt = (
            "A target failed evaluation. Create one fix task per failure "
            "cause (a single placeholder chain, a single rubric failure, a "
            'single gate violation). Answer with JSON {"tasks": [{"title": '
            '"...", "prompt": "...", "reason": "..."}]}.\n\n'
            f"Target {target.id} ({target.section} {target.label}): "
            f"{target.statement_text}\n\nFailure reasons:\n{reasons}"
        )
        specs: list[dict]
        try:
            payload = request_json_payload(session, prompt, required={"tasks": list})
            specs = [
                s for s in payload["tasks"]
                if isinstance(s, dict) and s.get("title") and s.get("prompt")
            ][: self.max_fix_tasks_per_target]
            if not specs:
                raise MalformedPayload("triage returned no usable tasks")
        except MalformedPayload:
            specs = [
                {
                    "title": f"fix {verdict.target_id}",
                    "prompt": (
                        f"Repair the formalization of target {verdict.target_id}. "
                        f"Failures:\n{reasons}\n(coarse fallback task; triage agent "
                        "unavailable)"
                    ),
                    "reason": "triage fallback",
                }
            ]
        created: list[str] = []
        for spec in specs:
            created.append(
                self.tasks.add_task(
                    title=spec["title"],
                    prompt=spec["prompt"],
                    kind=TaskKind.FIX,
                    origin=TaskOrigin.TRIAGE,
                    target_refs=[verdict.target_id],
                    priority=10,
                )
            )
        return created
