from __future__ import annotations

import json
from pathlib import Path

import pytest

from formforge.agents.backends import ScriptedBackend
from formforge.agents.roles import RoleName, default_role_configs
from formforge.agents.runtime import AgentSession
from formforge.clock import LogicalClock
from formforge.driver.config import SimulateProfile
from formforge.driver.scripted import ScriptedRoles
from formforge.seeds import DecisionRng
from formforge.taskgraph import TaskStore
from formforge.tools.builtins import register_builtin_tools
from formforge.tools.registry import BoundTools, PermissionSet, ToolContext, ToolRegistry
from formforge.vcs import Workspace


@pytest.fixture
def store(tmp_path) -> TaskStore:
    return TaskStore(tmp_path / "state", clock=LogicalClock())


@pytest.fixture
def workspace(tmp_path) -> Workspace:
    ws = Workspace(
        tmp_path / "repo",
        tmp_path / "worktrees",
        log_path=tmp_path / "state" / "vcs.log",
        deterministic=True,
    )
    ws.init_repository()
    return ws


def write_and_commit(ws: Workspace, handle, files: dict[str, str], message: str) -> str:
    for rel, content in files.items():
        path = handle.path / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
    ws.git.run("add", "-A", cwd=handle.path)
    ws.git.run("commit", "-m", message, cwd=handle.path)
    return ws.git.run("rev-parse", "HEAD", cwd=handle.path).stdout.strip()


@pytest.fixture
def scripted_factory(tmp_path):
    """Agent factory backed by the deterministic scripted roles."""
    backend = ScriptedBackend(handler=ScriptedRoles(DecisionRng(11), SimulateProfile()))
    registry = ToolRegistry()
    register_builtin_tools(registry)
    roles = default_role_configs()
    counter = {"n": 0}

    def factory(role_name, sandbox_root=None, meta=None, extra_services=None, **_kw):
        counter["n"] += 1
        role = roles[RoleName(role_name)]
        services = {
            "scratchpad_dir": str(tmp_path / "scratch"),
            "skills_dir": str(tmp_path / "skills"),
        }
        services.update(extra_services or {})
        ctx = ToolContext(
            permissions=PermissionSet(
                allowed_tools=frozenset(role.toolset) & frozenset(registry.names()),
                sandbox_root=Path(sandbox_root or tmp_path),
                can_write=False,
            ),
            services=services,
            agent_id=f"{role_name}-{counter['n']}",
        )
        return AgentSession(
            agent_id=ctx.agent_id,
            role=role,
            backend=backend,
            tools=BoundTools(registry, ctx),
            meta=dict(meta or {}),
        )

    factory.backend = backend
    return factory


def read_events(path: Path) -> list[dict]:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
