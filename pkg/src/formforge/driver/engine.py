"""The run engine.

One round of the loop: a planning round mutates the task DAG (round one
builds it from the targets manifest; later rounds re-open failed tasks with
rewritten prompts and consume user directives), the dispatcher races
workers on every ready task in isolated worktrees, the merge queue
integrates reviewed winners in verified batches, and the supervisor
re-evaluates affected targets and files fix tasks. The loop ends when every
goal is complete or no progress is possible.

Two drive modes share all of this machinery. Live mode runs attempts on
real threads with cooperative cancellation and HTTP model backends.
Simulate mode runs attempts sequentially against scripted backends under a
logical clock with per-decision seeded randomness, which makes a run's
event logs byte-reproducible for a fixed seed and lets a killed run resume
from its logs without duplicating merges.
"""

from __future__ import annotations

import csv
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from ..accounting import ModelTier, UsageMeter
from ..agents.backends import HttpBackend, ModelBackend, ScriptedBackend
from ..agents.protocol import MalformedPayload, parse_json_payload
from ..agents.roles import RoleName, load_role_configs
from ..agents.runtime import AgentSession, CancelToken, ConversationStatus
from ..clock import LogicalClock, WallClock
from ..events import EventLog
from ..evaluation import EvaluationHarness, TargetStatement, load_targets_manifest
from ..goals import GoalStore, Supervisor
from ..mergequeue import (
    BisectionOutcome,
    GitIntegrationBackend,
    MergeCandidate,
    MergeQueue,
)
from ..processes import ProcessRegistry
from ..seeds import DecisionRng
from ..taskgraph import (
    AttemptOutcome,
    TaskRecord,
    TaskStatus,
    TaskStore,
)
from ..tools.builtins import register_builtin_tools
from ..tools.registry import BoundTools, PermissionSet, ToolContext, ToolRegistry
from ..toylang import export_declarations
from ..vcs import RebaseConflict, VcsError, Workspace
from ..verifiers import VerifierUnavailable, make_verifier
from .config import RunConfig
from .inbox import DirectiveQueue, EscalationInbox
from .resources import ResourcePool
from .scripted import ScriptedRoles
from .traces import TraceReport, TraceStore


class SimulatedCrash(RuntimeError):
    """Raised by the crash-injection test hook mid-run."""


@dataclass
class AttemptResult:
    outcome: AttemptOutcome
    attempt_id: str = ""
    branch: str = ""
    review_token: str = ""
    failure_note: str = ""


def _decl_name(target_id: str) -> str:
    return f"decl_{target_id}"


def parse_target_uses(target: TargetStatement) -> list[str]:
    """Dependency hints in a manifest entry's notes: `uses: T1 T2`."""
    for line in target.notes.splitlines():
        line = line.strip()
        if line.startswith("uses:"):
            return line[len("uses:"):].split()
    return []


class Engine:
    def __init__(self, config: RunConfig) -> None:
        self.config = config
        for directory in (
            config.state_dir, config.reports_dir, config.skills_dir,
            config.scratch_dir, config.worktrees_dir, config.traces_dir,
        ):
            directory.mkdir(parents=True, exist_ok=True)

        self.simulate = config.mode == "simulate"
        self.clock = LogicalClock() if self.simulate else WallClock()
        self.rng = DecisionRng(config.seed or 0)

        self.tasks = TaskStore(
            config.state_dir, clock=self.clock,
            default_racing_width=config.racing_width_default,
        )
        self.goals = GoalStore(config.state_dir, clock=self.clock)
        self.meter = UsageMeter(config.state_dir, clock=self.clock)
        self.escalations = EscalationInbox(config.state_dir, clock=self.clock)
        self.directives = DirectiveQueue(config.state_dir, clock=self.clock)
        self.traces = TraceStore(config.traces_dir)
        self.processes = ProcessRegistry()

        self.workspace = Workspace(
            config.repo_dir,
            config.worktrees_dir,
            log_path=config.state_dir / "vcs.log",
            deterministic=self.simulate,
        )
        self.workspace.init_repository()
        self._resume_attempt_counter()

        self.verifier = make_verifier(config.verifier)
        self.exporter = export_declarations

        self.manifest = load_targets_manifest(config.targets_manifest)
        self.targets = {t.id: t for t in self.manifest.targets}
        self.goals.register_targets([t.id for t in self.manifest.targets])

        self.model_pool = ResourcePool("model", config.max_concurrent_model_calls)
        self.tool_pool = ResourcePool("tool", config.max_concurrent_tool_calls)

        self.registry = ToolRegistry(
            invocation_log=EventLog(
                config.state_dir / "tool_invocations.jsonl", clock=self.clock
            ),
            clock=self.clock,
        )
        register_builtin_tools(self.registry)

        self.roles = load_role_configs(config.config_dir)
        self._backends = self._build_backends()

        self.merge_queue = MergeQueue(
            GitIntegrationBackend(self.workspace, self.verifier),
            state_dir=config.state_dir,
            clock=self.clock,
            default_batch_size=config.merge_batch_size,
        )

        self.harness = EvaluationHarness(
            self.verifier,
            self.agent_factory,
            legitimate_axioms=frozenset(config.legitimate_axioms),
            config_dir=config.config_dir,
            collect_containment=config.collect_containment,
            max_parallel=1 if self.simulate else config.max_concurrent_model_calls,
        )
        self.supervisor = Supervisor(
            goals=self.goals,
            tasks=self.tasks,
            workspace=self.workspace,
            harness=self.harness,
            agent_factory=self.agent_factory,
            exporter=self.exporter,
            targets=list(self.manifest.targets),
            state_dir=config.state_dir,
        )
        self._resume_eval_counter()

        self._orchestrator_session: AgentSession | None = None
        self._analyzer_sessions: dict[str, AgentSession] = {}
        self._round = 0
        self._stop_requested = threading.Event()
        self._event_count = 0
        self._wire_crash_hook()
        self.run_state = "initialized"

    # -- wiring -----------------------------------------------------------------

    def _build_backends(self) -> dict[ModelTier, ModelBackend]:
        if self.simulate or self.config.backend_flagship == "scripted":
            scripted = ScriptedBackend(
                handler=ScriptedRoles(self.rng, self.config.simulate)
            )
            self.scripted_backend = scripted
            return {ModelTier.FLAGSHIP: scripted, ModelTier.SMALL: scripted}
        self.scripted_backend = None
        return {
            ModelTier.FLAGSHIP: HttpBackend(
                model=self.config.backend_flagship,
                url=self.config.model_url,
                api_key=self.config.model_key,
            ),
            ModelTier.SMALL: HttpBackend(
                model=self.config.backend_small,
                url=self.config.model_url,
                api_key=self.config.model_key,
            ),
        }

    def _wire_crash_hook(self) -> None:
        limit = self.config.crash_after_events
        if limit is None:
            return

        def on_event(_record: dict) -> None:
            self._event_count += 1
            if self._event_count >= limit:
                raise SimulatedCrash(f"injected crash after {limit} events")

        for store in (self.tasks, self.goals, self.meter, self.merge_queue,
                      self.escalations, self.directives):
            store.subscribe(on_event)

    def _resume_attempt_counter(self) -> None:
        proc = self.workspace.git.run(
            "branch", "--list", "task/*", cwd=self.workspace.repo_dir, check=False
        )
        highest = 0
        for line in proc.stdout.splitlines():
            name = line.strip().lstrip("* ")
            parts = name.rsplit("/", 1)
            if len(parts) == 2 and parts[1].startswith("a-"):
                try:
                    highest = max(highest, int(parts[1][2:]))
                except ValueError:
                    continue
        self.workspace._attempt_counter = highest

    def _resume_eval_counter(self) -> None:
        verdicts = self.config.state_dir / "verdicts"
        highest = 0
        if verdicts.exists():
            for path in verdicts.glob("eval-*.json"):
                try:
                    highest = max(highest, int(path.stem.split("-")[-1]))
                except ValueError:
                    continue
        self.supervisor._eval_counter = highest

    # -- agent factory --------------------------------------------------------------

    def agent_factory(
        self,
        role_name: str,
        sandbox_root: Path | None = None,
        meta: dict | None = None,
        extra_services: dict | None = None,
        cancel: CancelToken | None = None,
    ) -> AgentSession:
        role = self.roles[RoleName(role_name)]
        conversation_id = self.traces.new_conversation_id()
        agent_id = f"{role_name}-{conversation_id}"
        meta = dict(meta or {})
        meta["conversation_id"] = conversation_id

        sandbox = Path(sandbox_root) if sandbox_root else self.workspace.repo_dir
        can_write = role.name in (RoleName.WORKER, RoleName.TRACE_ANALYZER)
        permissions = PermissionSet(
            allowed_tools=frozenset(role.toolset) & frozenset(self.registry.names()),
            sandbox_root=sandbox,
            can_write=can_write,
        )
        services = {
            "task_store": self.tasks,
            "goal_store": self.goals,
            "escalations": self.escalations,
            "git": self.workspace.git,
            "trace_store": self.traces,
            "scratchpad_dir": str(self.config.scratch_dir),
            "skills_dir": str(self.config.skills_dir),
            "spawn": self._make_spawner(conversation_id, sandbox),
            "task_origin": _origin_for_role(role.name),
            "task_id": meta.get("task_id", ""),
        }
        services.update(extra_services or {})
        ctx = ToolContext(
            permissions=permissions,
            services=services,
            agent_id=agent_id,
            conversation_id=conversation_id,
        )
        session = AgentSession(
            agent_id=agent_id,
            role=role,
            backend=self._backends[role.model_tier],
            tools=BoundTools(
                self.registry, ctx, tool_permit=lambda: self.tool_pool.permit()
            ),
            meter=self.meter,
            cancel=cancel,
            summarizer=self._make_summarizer(conversation_id, sandbox),
            on_turn=self.traces.write,
            model_permit=lambda: self.model_pool.permit(),
            meta=meta,
        )
        services["session"] = session
        return session

    def _make_spawner(self, parent_conversation: str, sandbox: Path):
        def spawn(role_name: str, prompt: str) -> str:
            child = self.agent_factory(
                role_name,
                sandbox_root=sandbox,
                meta={"parent": parent_conversation},
            )
            result = child.run(prompt)
            return result.conversation.final_text()

        return spawn

    def _make_summarizer(self, parent_conversation: str, sandbox: Path):
        def summarize(text: str) -> str:
            return self._make_spawner(parent_conversation, sandbox)(
                "reader", "Summarize this conversation history:\n" + text
            )

        return summarize

    # -- planning ----------------------------------------------------------------------

    def _target_plan_payload(self) -> list[dict]:
        return [
            {
                "id": t.id,
                "title": f"{t.section} {t.label}".strip(),
                "uses": parse_target_uses(t),
                "has_source_proof": t.has_source_proof,
            }
            for t in self.manifest.targets
        ]

    def _replannable_failed_tasks(self) -> list[TaskRecord]:
        return [
            t
            for t in self.tasks.live_tasks()
            if t.status is TaskStatus.FAILED
            and t.attempt_count < self.config.max_attempts_per_task
        ]

    def _planning_round(self, round_no: int) -> None:
        if round_no > 1 and self.config.ablations.disable_orchestrator_loop:
            return
        pending_directives = self.directives.consume_pending()
        replannable = self._replannable_failed_tasks()
        if round_no > 1 and not pending_directives and not replannable:
            return

        if self._orchestrator_session is None:
            self._orchestrator_session = self.agent_factory("orchestrator")
        session = self._orchestrator_session
        session.meta.update(
            {
                "round": round_no,
                "targets": self._target_plan_payload(),
                "replannable": [
                    {"id": t.id, "title": t.title, "prompt": t.prompt,
                     "attempt_count": t.attempt_count}
                    for t in replannable
                ],
                "directives": [d.text for d in pending_directives],
            }
        )
        for directive in pending_directives:
            session.post_user(f"User directive: {directive.text}")
        if round_no == 1:
            session.run(
                "Plan the run: create one task per formalizable target with "
                "dependency edges following the source's logical structure. "
                "Each task covers at most one statement."
            )
        else:
            session.run(
                f"Planning round {round_no}: review failed tasks and analyzer "
                "reports; update or split failed tasks (never reuse an "
                "identical prompt) and re-open what should be retried."
            )

    # -- dispatch and racing -------------------------------------------------------------

    def _declaration_specs(self, task: TaskRecord) -> tuple[list[dict], str]:
        if task.kind.value == "decompose-helper":
            return (
                [{"name": f"helper_{task.id.replace('-', '_')}", "refs": [],
                  "axiomatize": False}],
                f"src/helpers/{task.id}.fml",
            )
        specs = []
        file_path = "src/work.fml"
        for ref in sorted(task.target_refs):
            target = self.targets.get(ref)
            if target is None:
                continue
            specs.append(
                {
                    "name": _decl_name(ref),
                    "refs": [_decl_name(u) for u in parse_target_uses(target)],
                    "axiomatize": not target.has_source_proof,
                }
            )
            file_path = f"src/{ref}.fml"
        return specs, file_path

    def _dispatchable_tasks(self) -> list[TaskRecord]:
        pending_candidates = set(self.merge_queue.pending_tasks())
        ready = [
            self.tasks.get(tid)
            for tid in self.tasks.ready_set()
            if tid not in pending_candidates
        ]
        retryable = [
            t
            for t in self.tasks.live_tasks()
            if t.status is TaskStatus.IN_PROGRESS
            and t.attempt_count < self.config.max_attempts_per_task
            and t.id not in pending_candidates
        ]
        return ready + retryable

    def _dispatch_wave(self) -> int:
        tasks = self._dispatchable_tasks()
        if not tasks:
            return 0
        if self.simulate:
            for task in tasks:
                self._run_racing_round(task.id)
        else:
            with ThreadPoolExecutor(
                max_workers=max(4, self.config.max_concurrent_model_calls)
            ) as pool:
                futures = [
                    pool.submit(self._run_racing_round, task.id) for task in tasks
                ]
                for future in futures:
                    future.result()
        return len(tasks)

    def _run_racing_round(self, task_id: str) -> None:
        task = self.tasks.get(task_id)
        if task.status is TaskStatus.PENDING:
            self.tasks.update_task(task_id, status=TaskStatus.IN_PROGRESS.value)
            task = self.tasks.get(task_id)
        budget_left = self.config.max_attempts_per_task - task.attempt_count
        width = max(1, min(task.racing_width, budget_left))

        winner_lock = threading.Lock()
        winner_found = threading.Event()
        cancels = [CancelToken() for _ in range(width)]
        results: list[AttemptResult | None] = [None] * width
        base_attempt_index = task.attempt_count

        def attempt_runner(slot: int) -> None:
            if winner_found.is_set():
                results[slot] = AttemptResult(outcome=AttemptOutcome.CANCELLED)
                return
            result = self._run_single_attempt(
                task_id, base_attempt_index + slot + 1, cancels[slot]
            )
            if result.outcome is AttemptOutcome.WON:
                with winner_lock:
                    if winner_found.is_set():
                        result.outcome = AttemptOutcome.LOST_RACE
                    else:
                        winner_found.set()
                        for other, token in enumerate(cancels):
                            if other != slot:
                                token.cancel()
                        self.merge_queue.enqueue(
                            MergeCandidate(
                                task_id=task_id,
                                branch=result.branch,
                                review_token=result.review_token,
                                attempt_id=result.attempt_id,
                            )
                        )
            results[slot] = result

        if self.simulate:
            for slot in range(width):
                attempt_runner(slot)
        else:
            threads = [
                threading.Thread(target=attempt_runner, args=(slot,), daemon=True)
                for slot in range(width)
            ]
            for thread in threads:
                thread.start()
            for thread in threads:
                thread.join()

        for result in results:
            if result is not None:
                self.tasks.record_attempt(task_id, result.outcome)

        task = self.tasks.get(task_id)
        if not winner_found.is_set():
            if not self.config.ablations.disable_trace_analyzer:
                self._analyze_failure(task)
            if task.attempt_count >= self.config.max_attempts_per_task:
                self.tasks.update_task(task_id, status=TaskStatus.FAILED.value)

    def _run_single_attempt(
        self, task_id: str, attempt_index: int, cancel: CancelToken
    ) -> AttemptResult:
        task = self.tasks.get(task_id)
        try:
            handle = self.workspace.create_worktree(task_id)
        except VcsError as exc:
            self.escalations.file(
                from_agent="dispatcher", task_id=task_id,
                severity="critical", message=f"worktree creation failed: {exc}",
            )
            return AttemptResult(outcome=AttemptOutcome.ESCALATED,
                                 failure_note=str(exc))
        declarations, file_path = self._declaration_specs(task)
        answers = self.escalations.unconsumed_answers_for(task_id)
        answer_note = ""
        if answers:
            answer_note = "\n\nOperator answers to earlier escalations:\n" + "\n".join(
                f"- {e.response}" for e in answers
            )
            for escalation in answers:
                self.escalations.mark_answer_consumed(escalation.id)

        def live_answers() -> list[str]:
            notes = []
            for escalation in self.escalations.unconsumed_answers_for(task_id):
                notes.append(
                    f"Operator answer to escalation {escalation.id}: "
                    f"{escalation.response}"
                )
                self.escalations.mark_answer_consumed(escalation.id)
            return notes

        session = self.agent_factory(
            "worker",
            sandbox_root=handle.path,
            cancel=cancel,
            meta={
                "task_id": task_id,
                "attempt_id": handle.attempt_id,
                "attempt_index": attempt_index,
                "declarations": declarations,
                "file": file_path,
                "target_refs": sorted(task.target_refs),
            },
        )
        session.inbox_check = live_answers
        prompt = (
            f"{task.prompt}\n\nWork in your worktree; read "
            f"skills/tasks/{task_id}/guide.md before writing code; commit with "
            f"the task id as the message prefix.{answer_note}"
        )
        result = session.run(prompt)

        outcome: AttemptOutcome
        review_token = ""
        if result.status is ConversationStatus.CANCELLED:
            outcome = AttemptOutcome.CANCELLED
        elif result.status is ConversationStatus.ESCALATED:
            outcome = AttemptOutcome.ESCALATED
        elif result.status is not ConversationStatus.FINISHED:
            outcome = AttemptOutcome.BUILD_FAILED
        else:
            verdict = self.verifier.verify(handle.path)
            if not verdict.passed:
                outcome = AttemptOutcome.BUILD_FAILED
            elif cancel.cancelled:
                outcome = AttemptOutcome.CANCELLED
            else:
                review = self._review_attempt(task, handle)
                if review is None:
                    outcome = AttemptOutcome.CANCELLED
                elif review[0]:
                    outcome = AttemptOutcome.WON
                    review_token = review[1]
                else:
                    outcome = AttemptOutcome.REVIEW_REJECTED
        if outcome is AttemptOutcome.WON:
            try:
                self.workspace.sync_worktree(handle)
            except RebaseConflict as exc:
                outcome = AttemptOutcome.BUILD_FAILED
                review_token = ""
                self._cleanup_attempt(handle, keep_branch=False)
                return AttemptResult(
                    outcome=outcome,
                    attempt_id=handle.attempt_id,
                    failure_note=f"rebase conflict: {exc.conflict_report}",
                )
            self._cleanup_attempt(handle, keep_branch=True)
        else:
            self._cleanup_attempt(handle, keep_branch=False)
        return AttemptResult(
            outcome=outcome,
            attempt_id=handle.attempt_id,
            branch=handle.branch,
            review_token=review_token,
        )

    def _review_attempt(self, task: TaskRecord, handle) -> tuple[bool, str] | None:
        from ..agents.runtime import request_review_verdict

        session = self.agent_factory(
            "reviewer",
            sandbox_root=handle.path,
            meta={"task_id": task.id, "attempt_id": handle.attempt_id},
        )
        prompt = (
            f"Review the change on branch {handle.branch} for task {task.id} "
            f"({task.title}). Check compilation, completion against the "
            "source, mathematical correctness, conventions, and dishonest "
            "proof patterns. Answer APPROVED: <reason> or REJECTED: <feedback>."
        )
        verdict = request_review_verdict(session, prompt)
        if session.conversation.status is ConversationStatus.CANCELLED:
            return None
        return verdict.approved, session.meta["conversation_id"]

    def _cleanup_attempt(self, handle, keep_branch: bool) -> None:
        self.workspace.cleanup(handle, keep_branch=keep_branch)

    # -- failure analysis -----------------------------------------------------------------

    def _analyze_failure(self, task: TaskRecord) -> TraceReport | None:
        session = self._analyzer_sessions.get(task.id)
        if session is None:
            session = self.agent_factory(
                "trace_analyzer",
                sandbox_root=self.config.run_dir,
                meta={"task_id": task.id},
            )
            self._analyzer_sessions[task.id] = session
        session.meta.update(
            {
                "attempt_count": task.attempt_count,
                "outcomes": [o.value for o in task.attempt_history],
                "status": task.status.value,
                "target_refs": sorted(task.target_refs),
                "dag_actions": self.config.analyzer_dag_actions,
            }
        )
        result = session.run(
            f"Task {task.id} failed again (attempts: {task.attempt_count}). "
            "Inspect the traces, write your report and the skill guide, and "
            "recommend decomposition if the task is too big."
        )
        try:
            payload = parse_json_payload(
                result.conversation.final_text(),
                required={"task_id": str, "summary": str},
            )
            report = TraceReport.from_payload(payload)
        except MalformedPayload:
            report = TraceReport(
                task_id=task.id,
                status=task.status.value,
                attempt_count=task.attempt_count,
                summary="analyzer produced no structured report",
            )
        report_path = self.config.reports_dir / f"{task.id}.json"
        if not report_path.exists():
            report_path.write_text(
                json.dumps(report.to_payload(), indent=2) + "\n", encoding="utf-8"
            )
        guide = self.config.skills_dir / "tasks" / task.id / "guide.md"
        if not guide.exists():
            guide.parent.mkdir(parents=True, exist_ok=True)
            guide.write_text(
                f"# Guide for {task.id}\n\n"
                + "\n".join(f"- {s}" for s in report.suggestions)
                + "\n",
                encoding="utf-8",
            )
        if report.escalation_recommendation:
            self.escalations.file(
                from_agent=session.agent_id, task_id=task.id,
                severity="warning", message=report.escalation_recommendation,
            )
        return report

    # -- merging and supervision --------------------------------------------------------------

    def _process_merges(self) -> list[BisectionOutcome]:
        outcomes: list[BisectionOutcome] = []
        while self.merge_queue.queue_depth() > 0:
            old_head = self.workspace.main_head()
            try:
                outcome = self.merge_queue.process_batch(self.config.merge_batch_size)
            except VerifierUnavailable as exc:
                self.escalations.file(
                    from_agent="merge-queue", task_id="",
                    severity="critical", message=f"verifier unavailable: {exc}",
                )
                break
            outcomes.append(outcome)
            for task_id in outcome.landed:
                if self.tasks.exists(task_id):
                    record = self.tasks.get(task_id)
                    if record.status is TaskStatus.IN_PROGRESS:
                        self.tasks.update_task(
                            task_id, status=TaskStatus.COMPLETED.value
                        )
            for rejected in outcome.rejected:
                if self.tasks.exists(rejected.task_id):
                    record = self.tasks.get(rejected.task_id)
                    if record.status is TaskStatus.IN_PROGRESS:
                        self.tasks.update_task(
                            rejected.task_id, status=TaskStatus.FAILED.value
                        )
                    if not self.config.ablations.disable_trace_analyzer:
                        self._analyze_failure(self.tasks.get(rejected.task_id))
            self._delete_processed_branches(outcome)
            if outcome.landed and outcome.new_head and not (
                self.config.ablations.disable_supervisor
            ):
                self.supervisor.on_merge(outcome.landed, old_head, outcome.new_head)
            if not outcome.landed and not outcome.rejected:
                break
        return outcomes

    def _delete_processed_branches(self, outcome: BisectionOutcome) -> None:
        done = set(outcome.landed) | {r.task_id for r in outcome.rejected}
        proc = self.workspace.git.run(
            "branch", "--list", "task/*", cwd=self.workspace.repo_dir, check=False
        )
        for line in proc.stdout.splitlines():
            name = line.strip().lstrip("* ")
            parts = name.split("/")
            if len(parts) == 3 and parts[1] in done:
                self.workspace.git.run(
                    "branch", "-D", name, cwd=self.workspace.repo_dir, check=False
                )

    # -- progress curve ---------------------------------------------------------------------

    def _curve_path(self) -> Path:
        return self.config.reports_dir / "curve.csv"

    def _record_curve_point(self) -> None:
        path = self._curve_path()
        new_file = not path.exists()
        summary = self.goals.progress_summary()
        completed = summary["counts"]["completed"]
        total = summary["total"] or 1
        with path.open("a", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            if new_file:
                writer.writerow(
                    ["round", "effective_tokens", "completed", "total", "percent"]
                )
            writer.writerow(
                [
                    self._round,
                    f"{float(self.meter.total_effective_tokens()):.2f}",
                    completed,
                    summary["total"],
                    f"{100.0 * completed / total:.2f}",
                ]
            )

    # -- recovery -----------------------------------------------------------------------------

    def _recover_interrupted_tasks(self) -> None:
        """After a crash: re-open tasks that were mid-flight when we died and
        re-run supervision for landed work that was never evaluated."""
        self.workspace.prune_stale_worktrees()
        landed = set(self.merge_queue.landed_tasks())
        pending_candidates = set(self.merge_queue.pending_tasks())
        for task in self.tasks.live_tasks():
            if task.status is not TaskStatus.IN_PROGRESS:
                continue
            if task.id in pending_candidates:
                continue  # its candidate survives; the merge loop will finish it
            if task.id in landed:
                self.tasks.update_task(task.id, status=TaskStatus.COMPLETED.value)
                continue
            self.tasks.update_task(task.id, status=TaskStatus.FAILED.value)
            if task.attempt_count < self.config.max_attempts_per_task:
                self.tasks.update_task(
                    task.id,
                    status=TaskStatus.PENDING.value,
                    prompt=task.prompt + "\n(Recovered after an interrupted run.)",
                )
        if self.config.ablations.disable_supervisor:
            return
        unevaluated: set[str] = set()
        goal_status = self.goals.progress_summary()["per_target"]
        for task_id in landed:
            if not self.tasks.exists(task_id):
                continue
            for ref in self.tasks.get(task_id).target_refs:
                if goal_status.get(ref) == "pending":
                    unevaluated.add(ref)
        if unevaluated:
            self.supervisor.catch_up(sorted(unevaluated))

    # -- the run loop ----------------------------------------------------------------------------

    def run(self) -> dict:
        self.run_state = "running"
        try:
            self._recover_interrupted_tasks()
            already_planned = any(
                t.origin.value == "orchestrator" for t in self.tasks.all_tasks()
            )
            while self._round < self.config.max_rounds:
                if self._stop_requested.is_set():
                    break
                self._round += 1
                if self._round > 1 or not already_planned:
                    self._planning_round(self._round)
                dispatched = self._dispatch_wave()
                merged = self._process_merges()
                if merged:
                    self._record_curve_point()
                summary = self.goals.progress_summary()
                if summary["total"] and summary["counts"]["completed"] == summary["total"]:
                    break
                if not dispatched and not merged and not self._work_remaining():
                    break
            final_eval = None
            if self.config.ablations.disable_supervisor or self.config.final_full_eval:
                final_eval = self.supervisor.full_evaluation()
                self._record_curve_point()
            report = self._final_report(final_eval)
            self.run_state = "finished"
            return report
        finally:
            self.tasks.save_snapshot()
            self.goals.save_snapshot()
            self.processes.teardown()
            self.registry.shutdown()
            if self.run_state != "finished":
                self.run_state = "stopped"

    def _work_remaining(self) -> bool:
        if self.tasks.ready_set():
            return True
        for task in self.tasks.live_tasks():
            if (
                task.status is TaskStatus.IN_PROGRESS
                and task.attempt_count < self.config.max_attempts_per_task
            ):
                return True
        if self.merge_queue.queue_depth() > 0:
            return True
        if (
            not self.config.ablations.disable_orchestrator_loop
            and self._replannable_failed_tasks()
        ):
            return True
        return False

    def request_stop(self) -> None:
        self._stop_requested.set()

    def _final_report(self, final_eval) -> dict:
        cost = self.meter.aggregate()
        report = {
            "mode": self.config.mode,
            "seed": self.config.seed,
            "rounds": self._round,
            "goals": self.goals.progress_summary(),
            "tasks": self.tasks.counts_by_status(),
            "cost": cost.to_payload(),
            "merged_tasks": self.merge_queue.landed_tasks(),
            "linear_history": self.workspace.assert_linear_history(),
            "pools": {
                "model": self.model_pool.metrics(),
                "tool": self.tool_pool.metrics(),
            },
            "final_eval_passed": final_eval.passed_count if final_eval else None,
        }
        path = self.config.state_dir / "final_report.json"
        path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        return report

    # -- API support -------------------------------------------------------------------------------

    def status_payload(self) -> dict:
        summary = self.goals.progress_summary()
        return {
            "state": self.run_state,
            "mode": self.config.mode,
            "round": self._round,
            "goals_completed": summary["counts"]["completed"],
            "goals_total": summary["total"],
            "open_escalations": self.escalations.open_count(),
            "queue_depth": self.merge_queue.queue_depth(),
            "effective_tokens": float(self.meter.total_effective_tokens()),
            "active_model_calls": self.model_pool.metrics()["active"],
            "active_tool_calls": self.tool_pool.metrics()["active"],
        }


def _origin_for_role(role: RoleName) -> str:
    if role is RoleName.TRACE_ANALYZER:
        return "trace-analyzer"
    if role is RoleName.TRIAGE:
        return "triage"
    return "orchestrator"
