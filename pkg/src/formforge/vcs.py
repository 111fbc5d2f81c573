"""Git-backed workspace isolation.

Every attempt gets a short-lived worktree on its own branch
(`task/<task>/<attempt>`) forked from the current main head. Work is pulled
back by rebase and integrated fast-forward-only, so main's history stays
linear. Git is driven through its command-line interface; every invocation
and its output is appended to `state/vcs.log`.
"""

from __future__ import annotations

import shutil
import subprocess
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path


class VcsError(Exception):
    pass


class RepoUnavailable(VcsError):
    pass


class DiskFull(VcsError):
    pass


class RebaseConflict(VcsError):
    def __init__(self, paths: list[str]) -> None:
        super().__init__(f"rebase conflict in: {', '.join(paths) or '<unknown>'}")
        self.conflict_report = paths


class NothingToMerge(VcsError):
    pass


class IntegrationOutcome(str, Enum):
    FAST_FORWARDED = "fast_forwarded"
    CONFLICT = "conflict"
    NOTHING_TO_MERGE = "nothing_to_merge"


@dataclass(frozen=True)
class IntegrationResult:
    outcome: IntegrationOutcome
    new_head: str | None = None
    conflict_report: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if (self.new_head is not None) != (
            self.outcome is IntegrationOutcome.FAST_FORWARDED
        ):
            raise ValueError("new_head present iff fast_forwarded")


@dataclass
class WorktreeHandle:
    attempt_id: str
    task_id: str
    branch: str
    path: Path
    base_commit: str
    integrated: bool = False


class GitCli:
    """Thin subprocess wrapper over the git executable with call logging."""

    def __init__(self, log_path: Path | None = None, env: dict[str, str] | None = None):
        self.log_path = log_path
        self.extra_env = env or {}
        self._log_lock = threading.Lock()

    def run(
        self,
        *args: str,
        cwd: Path,
        check: bool = True,
    ) -> subprocess.CompletedProcess:
        import os

        env = dict(os.environ)
        env.update(self.extra_env)
        proc = subprocess.run(
            ["git", *args],
            cwd=str(cwd),
            capture_output=True,
            text=True,
            env=env,
        )
        self._log(args, cwd, proc)
        if check and proc.returncode != 0:
            raise VcsError(
                f"git {' '.join(args)} failed ({proc.returncode}): {proc.stderr.strip()}"
            )
        return proc

    def _log(self, args: tuple[str, ...], cwd: Path, proc: subprocess.CompletedProcess):
        if self.log_path is None:
            return
        with self._log_lock:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with self.log_path.open("a", encoding="utf-8") as fh:
                fh.write(f"$ git {' '.join(args)}  # cwd={cwd} rc={proc.returncode}\n")
                for stream, text in (("out", proc.stdout), ("err", proc.stderr)):
                    for line in text.splitlines():
                        fh.write(f"  {stream}: {line}\n")


IDENTITY_GIT_ENV = {
    "GIT_AUTHOR_NAME": "formforge",
    "GIT_AUTHOR_EMAIL": "agents@formforge.local",
    "GIT_COMMITTER_NAME": "formforge",
    "GIT_COMMITTER_EMAIL": "agents@formforge.local",
}

# Fixed dates make commit ids a pure function of content and parents, which
# seed-fixed simulations rely on for reproducible event logs.
DETERMINISTIC_GIT_ENV = {
    **IDENTITY_GIT_ENV,
    "GIT_AUTHOR_DATE": "2000-01-01T00:00:00 +0000",
    "GIT_COMMITTER_DATE": "2000-01-01T00:00:00 +0000",
}


class Workspace:
    """Owns the shared repository, its worktrees, and the main-branch lock."""

    def __init__(
        self,
        repo_dir: Path,
        worktrees_dir: Path,
        log_path: Path | None = None,
        deterministic: bool = False,
        shared_link_dirs: dict[str, Path] | None = None,
    ) -> None:
        self.repo_dir = Path(repo_dir).resolve()
        self.worktrees_dir = Path(worktrees_dir).resolve()
        env = dict(DETERMINISTIC_GIT_ENV) if deterministic else dict(IDENTITY_GIT_ENV)
        self.git = GitCli(log_path=log_path, env=env)
        self.main_lock = threading.RLock()
        self._attempt_counter = 0
        self._counter_lock = threading.Lock()
        # Name -> source directory; linked (not copied) into every worktree.
        self.shared_link_dirs = shared_link_dirs or {}

    # -- repository lifecycle ----------------------------------------------

    def init_repository(self) -> None:
        if (self.repo_dir / ".git").exists():
            return
        self.repo_dir.mkdir(parents=True, exist_ok=True)
        self.git.run("init", "-b", "main", cwd=self.repo_dir)
        (self.repo_dir / ".gitignore").write_text("", encoding="utf-8")
        self.git.run("add", "-A", cwd=self.repo_dir)
        self.git.run("commit", "-m", "initial", "--allow-empty", cwd=self.repo_dir)

    def _require_repo(self) -> None:
        if not (self.repo_dir / ".git").exists():
            raise RepoUnavailable(f"no repository at {self.repo_dir}")

    def main_head(self) -> str:
        self._require_repo()
        return self.git.run("rev-parse", "main", cwd=self.repo_dir).stdout.strip()

    def rev_parse(self, ref: str, cwd: Path | None = None) -> str:
        return self.git.run("rev-parse", ref, cwd=cwd or self.repo_dir).stdout.strip()

    # -- worktrees -----------------------------------------------------------

    def next_attempt_id(self) -> str:
        with self._counter_lock:
            self._attempt_counter += 1
            return f"a-{self._attempt_counter:04d}"

    def create_worktree(self, task_id: str, attempt_id: str | None = None) -> WorktreeHandle:
        self._require_repo()
        attempt_id = attempt_id or self.next_attempt_id()
        branch = f"task/{task_id}/{attempt_id}"
        path = self.worktrees_dir / attempt_id
        path.parent.mkdir(parents=True, exist_ok=True)
        with self.main_lock:
            base = self.main_head()
            try:
                self.git.run(
                    "worktree", "add", "-b", branch, str(path), base, cwd=self.repo_dir
                )
            except VcsError as exc:
                if "No space left" in str(exc):
                    raise DiskFull(str(exc)) from exc
                raise
        for name, source in self.shared_link_dirs.items():
            link = path / name
            source = Path(source).resolve()
            if not link.exists():
                link.symlink_to(source, target_is_directory=True)
            # Shared stores are immutable: drop the write bits on the target
            # so no worktree can mutate what every other worktree links to.
            try:
                source.chmod(source.stat().st_mode & ~0o222)
            except OSError:
                pass
        return WorktreeHandle(
            attempt_id=attempt_id,
            task_id=task_id,
            branch=branch,
            path=path,
            base_commit=base,
        )

    def conflicted_paths(self, cwd: Path) -> list[str]:
        out = self.git.run(
            "diff", "--name-only", "--diff-filter=U", cwd=cwd, check=False
        ).stdout
        return sorted({line.strip() for line in out.splitlines() if line.strip()})

    def sync_worktree(self, handle: WorktreeHandle) -> IntegrationResult:
        """Rebase the attempt branch onto the current main head.

        On conflict the rebase is aborted: the worktree is left on its
        pre-rebase commit and the conflicted paths are reported.
        """
        self._require_repo()
        proc = self.git.run("rebase", "main", cwd=handle.path, check=False)
        if proc.returncode != 0:
            paths = self.conflicted_paths(handle.path)
            self.git.run("rebase", "--abort", cwd=handle.path, check=False)
            raise RebaseConflict(paths)
        head = self.rev_parse("HEAD", cwd=handle.path)
        main = self.main_head()
        if head == main:
            return IntegrationResult(outcome=IntegrationOutcome.NOTHING_TO_MERGE)
        return IntegrationResult(
            outcome=IntegrationOutcome.FAST_FORWARDED, new_head=head
        )

    def integrate(self, handle: WorktreeHandle) -> IntegrationResult:
        """Rebase then fast-forward main to the attempt branch; never merges."""
        self._require_repo()
        with self.main_lock:
            try:
                self.sync_worktree(handle)
            except RebaseConflict:
                raise
            branch_head = self.rev_parse(handle.branch)
            if branch_head == self.main_head():
                raise NothingToMerge(f"{handle.branch} is identical to main")
            self.git.run(
                "merge", "--ff-only", handle.branch, cwd=self.repo_dir
            )
            handle.integrated = True
            return IntegrationResult(
                outcome=IntegrationOutcome.FAST_FORWARDED,
                new_head=self.main_head(),
            )

    def fast_forward_main(self, commit: str) -> str:
        """Advance main to `commit` (must be a descendant); returns new head."""
        with self.main_lock:
            self.git.run("merge", "--ff-only", commit, cwd=self.repo_dir)
            return self.main_head()

    def cleanup(self, handle: WorktreeHandle, keep_branch: bool = False) -> None:
        """Remove the worktree directory and, unless integrated or explicitly
        kept (e.g. a merge candidate the queue has yet to replay), its branch.
        Idempotent."""
        for name in self.shared_link_dirs:
            link = handle.path / name
            if link.is_symlink():
                link.unlink()
        self.git.run(
            "worktree", "remove", "--force", str(handle.path),
            cwd=self.repo_dir, check=False,
        )
        if handle.path.exists():
            shutil.rmtree(handle.path, ignore_errors=True)
        self.git.run("worktree", "prune", cwd=self.repo_dir, check=False)
        if not handle.integrated and not keep_branch:
            self.git.run("branch", "-D", handle.branch, cwd=self.repo_dir, check=False)

    def prune_stale_worktrees(self) -> None:
        """Drop worktrees left behind by a crashed run."""
        self._require_repo()
        self.git.run("worktree", "prune", cwd=self.repo_dir, check=False)
        listed = self.git.run("worktree", "list", "--porcelain", cwd=self.repo_dir).stdout
        for block in listed.split("\n\n"):
            lines = block.strip().splitlines()
            if not lines:
                continue
            path = Path(lines[0].removeprefix("worktree ").strip())
            if path == self.repo_dir:
                continue
            if self.worktrees_dir in path.parents or path == self.worktrees_dir:
                self.git.run(
                    "worktree", "remove", "--force", str(path),
                    cwd=self.repo_dir, check=False,
                )
        if self.worktrees_dir.exists():
            for leftover in self.worktrees_dir.iterdir():
                shutil.rmtree(leftover, ignore_errors=True)
        self.git.run("worktree", "prune", cwd=self.repo_dir, check=False)

    # -- history checks ------------------------------------------------------

    def assert_linear_history(self) -> bool:
        """True iff every commit on main has at most one parent."""
        self._require_repo()
        out = self.git.run("rev-list", "--parents", "main", cwd=self.repo_dir).stdout
        for line in out.splitlines():
            if len(line.split()) > 2:
                return False
        return True

    def commits_on_main(self) -> list[str]:
        out = self.git.run("rev-list", "main", cwd=self.repo_dir).stdout
        return [line.strip() for line in out.splitlines() if line.strip()]

    def changed_files(self, old: str, new: str) -> list[str]:
        out = self.git.run("diff", "--name-only", f"{old}..{new}", cwd=self.repo_dir).stdout
        return sorted({line.strip() for line in out.splitlines() if line.strip()})

    def diff_text(self, old: str, new: str) -> str:
        return self.git.run("diff", f"{old}..{new}", cwd=self.repo_dir).stdout

    def unapplied_commits(self, branch: str) -> list[str]:
        """Commits on `branch` whose patches are not already on main."""
        out = self.git.run("cherry", "main", branch, cwd=self.repo_dir).stdout
        pending = []
        for line in out.splitlines():
            line = line.strip()
            if line.startswith("+"):
                pending.append(line.split()[1])
        return pending

    def branch_commits_since(self, branch: str, base: str) -> list[str]:
        """Commits contributed by `branch` over `base`, oldest first."""
        out = self.git.run(
            "rev-list", "--reverse", f"{base}..{branch}", cwd=self.repo_dir
        ).stdout
        return [line.strip() for line in out.splitlines() if line.strip()]
