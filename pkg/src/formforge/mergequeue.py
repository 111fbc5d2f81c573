"""Batched merge queue with prefix bisection.

Approved candidates queue in FIFO order. A batch is integrated by replaying
each candidate's commits in sequence onto a growing stack over main
(conflicting candidates are rejected immediately without consuming a
build), then verifying the whole stack with a single build. On a green
build everything lands fast-forward; on a red one, binary search over stack
prefixes isolates the smallest failing prefix: everything before it lands,
the candidate at the boundary is rejected with the failing diagnostics, and
the remainder is requeued at the head. Main is verifier-green after every
call.

Bisection is at candidate granularity — a candidate's commits land
atomically — and isolates exactly one breaker per call; additional breakers
are caught when the requeued tail is processed. When verifier verdicts are
not monotone in a candidate's presence the queue still guarantees a green
main, just not minimal blame.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .clock import Clock, WallClock
from .events import EventLog
from .vcs import Workspace
from .verifiers import BuildVerifier, Diagnostic, Verdict, VerifierUnavailable


class MergeQueueError(Exception):
    pass


class MissingReview(MergeQueueError):
    pass


@dataclass(frozen=True)
class MergeCandidate:
    task_id: str
    branch: str
    review_token: str
    attempt_id: str = ""
    enqueued_at: float = 0.0

    def to_payload(self) -> dict:
        return {
            "task_id": self.task_id,
            "branch": self.branch,
            "review_token": self.review_token,
            "attempt_id": self.attempt_id,
            "enqueued_at": self.enqueued_at,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "MergeCandidate":
        return cls(
            task_id=payload["task_id"],
            branch=payload["branch"],
            review_token=payload["review_token"],
            attempt_id=payload.get("attempt_id", ""),
            enqueued_at=float(payload.get("enqueued_at", 0.0)),
        )


@dataclass
class RejectedCandidate:
    task_id: str
    diagnostics: tuple[Diagnostic, ...]
    reason: str  # "build" or "conflict"


@dataclass
class BisectionOutcome:
    landed: list[str] = field(default_factory=list)
    rejected: list[RejectedCandidate] = field(default_factory=list)
    requeued: list[str] = field(default_factory=list)
    builds_used: int = 0
    new_head: str | None = None

    def to_payload(self) -> dict:
        return {
            "landed": self.landed,
            "rejected": [
                {
                    "task_id": r.task_id,
                    "reason": r.reason,
                    "diagnostics": [d.to_payload() for d in r.diagnostics],
                }
                for r in self.rejected
            ],
            "requeued": self.requeued,
            "builds_used": self.builds_used,
            "new_head": self.new_head,
        }


@dataclass
class ApplyResult:
    ok: bool
    conflict_paths: tuple[str, ...] = ()
    already_applied: bool = False


class IntegrationBackend(Protocol):
    """Operations the queue needs from version control and the builder."""

    def begin_batch(self) -> None:
        """Reset the integration stack to the current main head."""

    def apply(self, candidate: MergeCandidate) -> ApplyResult:
        """Replay the candidate's commits onto the stack."""

    def verify_prefix(self, k: int) -> Verdict:
        """Verify the stack state after the first k applied candidates."""

    def land_prefix(self, k: int) -> str | None:
        """Fast-forward main to the stack state after k candidates."""

    def abort(self) -> None:
        """Discard the in-progress stack."""


class GitIntegrationBackend:
    """Real integration: cherry-pick stacking in a dedicated worktree.

    Candidate branches are never mutated; their commits are replayed onto a
    detached integration worktree, so a requeued candidate can be replayed
    again later against whatever main has become.
    """

    def __init__(self, workspace: Workspace, verifier: BuildVerifier) -> None:
        self.workspace = workspace
        self.verifier = verifier
        self._stack_dir = workspace.worktrees_dir / "_integration"
        self._boundaries: list[str] = []

    def _git(self, *args: str, cwd: Path | None = None, check: bool = True):
        return self.workspace.git.run(*args, cwd=cwd or self._stack_dir, check=check)

    def begin_batch(self) -> None:
        repo = self.workspace.repo_dir
        if not self._stack_dir.exists():
            self.workspace.git.run(
                "worktree", "add", "--detach", str(self._stack_dir), "main", cwd=repo
            )
        self._git("cherry-pick", "--abort", check=False)
        self._git("checkout", "--detach", "main")
        self._git("reset", "--hard", "main")
        self._git("clean", "-fd")
        self._boundaries = [self.workspace.main_head()]

    def apply(self, candidate: MergeCandidate) -> ApplyResult:
        commits = self.workspace.unapplied_commits(candidate.branch)
        if not commits:
            return ApplyResult(ok=False, already_applied=True)
        start = self._git("rev-parse", "HEAD").stdout.strip()
        for commit in commits:
            proc = self._git("cherry-pick", commit, check=False)
            if proc.returncode == 0:
                continue
            combined = proc.stdout + proc.stderr
            if "empty" in combined and "--skip" in combined:
                self._git("cherry-pick", "--skip", check=False)
                continue
            conflicted = self.workspace.conflicted_paths(self._stack_dir)
            self._git("cherry-pick", "--abort", check=False)
            self._git("reset", "--hard", start)
            return ApplyResult(ok=False, conflict_paths=tuple(conflicted))
        self._boundaries.append(self._git("rev-parse", "HEAD").stdout.strip())
        return ApplyResult(ok=True)

    def verify_prefix(self, k: int) -> Verdict:
        self._git("checkout", "--detach", self._boundaries[k])
        return self.verifier.verify(self._stack_dir)

    def land_prefix(self, k: int) -> str | None:
        if k == 0:
            return None
        return self.workspace.fast_forward_main(self._boundaries[k])

    def abort(self) -> None:
        self._git("cherry-pick", "--abort", check=False)
        if self._boundaries:
            self._git("reset", "--hard", self._boundaries[0], check=False)


class SimulatedIntegrationBackend:
    """In-memory integration model for high-volume queue testing.

    `verdict_fn` maps the frozenset of candidate ids present in a tree
    (landed plus stacked prefix) to pass/fail; `conflicts` names candidates
    whose replay conflicts outright.
    """

    def __init__(
        self,
        verdict_fn: Callable[[frozenset[str]], bool],
        conflicts: set[str] | None = None,
    ) -> None:
        self.verdict_fn = verdict_fn
        self.conflicts = conflicts or set()
        self.main: list[str] = []
        self._stack: list[str] = []
        self.verify_calls = 0

    def begin_batch(self) -> None:
        self._stack = []

    def apply(self, candidate: MergeCandidate) -> ApplyResult:
        if candidate.task_id in self.main:
            return ApplyResult(ok=False, already_applied=True)
        if candidate.task_id in self.conflicts:
            return ApplyResult(ok=False, conflict_paths=("conflicted.fml",))
        self._stack.append(candidate.task_id)
        return ApplyResult(ok=True)

    def verify_prefix(self, k: int) -> Verdict:
        self.verify_calls += 1
        tree = frozenset(self.main) | frozenset(self._stack[:k])
        if self.verdict_fn(tree):
            return Verdict(passed=True)
        return Verdict(
            passed=False,
            diagnostics=(Diagnostic(file="stack", message="verification failed"),),
        )

    def land_prefix(self, k: int) -> str | None:
        self.main.extend(self._stack[:k])
        return f"head-{len(self.main)}"

    def abort(self) -> None:
        self._stack = []


class MergeQueue:
    """FIFO queue of reviewed candidates with batched, bisecting integration.

    enqueue is safe from any thread; process_batch must run on a single
    integration worker at a time (it owns the main-branch writer lock).
    """

    def __init__(
        self,
        backend: IntegrationBackend,
        state_dir: Path | None = None,
        clock: Clock | None = None,
        default_batch_size: int = 8,
    ) -> None:
        self.backend = backend
        self.clock = clock or WallClock()
        self.default_batch_size = default_batch_size
        self._lock = threading.RLock()
        self._queue: list[MergeCandidate] = []
        self._landed_tasks: list[str] = []
        self._rejected_tasks: list[str] = []
        self._log: EventLog | None = None
        if state_dir is not None:
            self._log = EventLog(Path(state_dir) / "merges.events.jsonl", clock=self.clock)
            self._replay()

    def _replay(self) -> None:
        assert self._log is not None
        for record in self._log.read():
            op, payload = record["op"], record["payload"]
            if op == "enqueued":
                self._queue.append(MergeCandidate.from_payload(payload))
            elif op == "batch_processed":
                landed = set(payload["landed"])
                rejected = {r["task_id"] for r in payload["rejected"]}
                requeued = payload["requeued"]
                remaining = [
                    c
                    for c in self._queue
                    if c.task_id not in landed and c.task_id not in rejected
                ]
                head = [c for c in remaining if c.task_id in requeued]
                tail = [c for c in remaining if c.task_id not in requeued]
                head.sort(key=lambda c: requeued.index(c.task_id))
                self._queue = head + tail
                self._landed_tasks.extend(payload["landed"])
                self._rejected_tasks.extend(rejected)

    def _emit(self, op: str, payload: dict) -> None:
        if self._log is not None:
            self._log.append(op, payload)

    def subscribe(self, callback) -> None:
        if self._log is not None:
            self._log.subscribe(callback)

    def pending_tasks(self) -> list[str]:
        with self._lock:
            return [c.task_id for c in self._queue]

    # -- operations ----------------------------------------------------------

    def enqueue(self, candidate: MergeCandidate) -> int:
        if not candidate.review_token:
            raise MissingReview(f"candidate for {candidate.task_id} lacks review approval")
        with self._lock:
            if candidate.task_id in self._landed_tasks:
                # A task's work lands at most once; a duplicate enqueue after
                # crash recovery is dropped rather than double-landed.
                self._emit("enqueue_deduplicated", candidate.to_payload())
                return -1
            if candidate.enqueued_at == 0.0:
                candidate = MergeCandidate(
                    task_id=candidate.task_id,
                    branch=candidate.branch,
                    review_token=candidate.review_token,
                    attempt_id=candidate.attempt_id,
                    enqueued_at=self.clock.now(),
                )
            self._queue.append(candidate)
            self._emit("enqueued", candidate.to_payload())
            return len(self._queue) - 1

    def queue_depth(self) -> int:
        with self._lock:
            return len(self._queue)

    def landed_tasks(self) -> list[str]:
        with self._lock:
            return list(self._landed_tasks)

    def process_batch(self, max_batch: int | None = None) -> BisectionOutcome:
        """Integrate up to max_batch queued candidates; see module docstring.

        Raises VerifierUnavailable with the queue left intact if the
        verifier itself cannot run. Rejection is a normal outcome.
        """
        max_batch = max_batch or self.default_batch_size
        with self._lock:
            batch = self._queue[:max_batch]
        outcome = BisectionOutcome()
        if not batch:
            return outcome

        self.backend.begin_batch()
        stacked: list[MergeCandidate] = []
        try:
            for candidate in batch:
                result = self.backend.apply(candidate)
                if result.already_applied:
                    # Crash recovery: the work is already on main.
                    outcome.landed.append(candidate.task_id)
                elif result.ok:
                    stacked.append(candidate)
                else:
                    outcome.rejected.append(
                        RejectedCandidate(
                            task_id=candidate.task_id,
                            reason="conflict",
                            diagnostics=tuple(
                                Diagnostic(file=p, message="merge conflict")
                                for p in result.conflict_paths
                            ),
                        )
                    )

            if stacked:
                n = len(stacked)
                verdicts: dict[int, Verdict] = {}
                verdicts[n] = self.backend.verify_prefix(n)
                outcome.builds_used += 1
                if verdicts[n].passed:
                    outcome.new_head = self.backend.land_prefix(n)
                    outcome.landed.extend(c.task_id for c in stacked)
                else:
                    # Smallest failing prefix; invariant: verify(hi) failed,
                    # verify(lo-1) passed (prefix 0 is main, green by the
                    # queue's own post-condition).
                    lo, hi = 1, n
                    verified_green_floor = 0
                    while lo < hi:
                        mid = (lo + hi) // 2
                        verdicts[mid] = self.backend.verify_prefix(mid)
                        outcome.builds_used += 1
                        if verdicts[mid].passed:
                            verified_green_floor = mid
                            lo = mid + 1
                        else:
                            hi = mid
                    p = lo
                    outcome.new_head = self.backend.land_prefix(p - 1)
                    outcome.landed.extend(c.task_id for c in stacked[: p - 1])
                    outcome.rejected.append(
                        RejectedCandidate(
                            task_id=stacked[p - 1].task_id,
                            reason="build",
                            diagnostics=verdicts[p].diagnostics,
                        )
                    )
                    outcome.requeued.extend(c.task_id for c in stacked[p:])
                    if verified_green_floor != p - 1:
                        confirm = self.backend.verify_prefix(p - 1)
                        outcome.builds_used += 1
                        if not confirm.passed:
                            raise VerifierUnavailable(
                                "main verifies red after landing a supposedly "
                                "green prefix; verifier is not deterministic"
                            )
        except VerifierUnavailable:
            self.backend.abort()
            raise

        with self._lock:
            landed = set(outcome.landed)
            rejected = {r.task_id for r in outcome.rejected}
            requeued_order = list(outcome.requeued)
            remaining = [
                c
                for c in self._queue
                if c.task_id not in landed and c.task_id not in rejected
            ]
            head = [c for c in remaining if c.task_id in requeued_order]
            tail = [c for c in remaining if c.task_id not in requeued_order]
            head.sort(key=lambda c: requeued_order.index(c.task_id))
            self._queue = head + tail
            self._landed_tasks.extend(outcome.landed)
            self._rejected_tasks.extend(rejected)
            self._emit("batch_processed", outcome.to_payload())
        return outcome
