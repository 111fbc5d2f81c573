"""Built-in tool suite.

Implementations receive a ToolContext whose services dict carries the
stores and callbacks each tool needs (task store, goal store, escalation
inbox, git driver, trace store, spawn callback, scratchpad/skills roots).
Filesystem tools resolve every path inside the caller's sandbox root;
scratchpads and skill guides live in their own dedicated roots and are
accessible regardless of the project-filesystem write flag.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..events import dump_canonical
from .registry import (
    PermissionDenied,
    SideEffects,
    ToolCategory,
    ToolContext,
    ToolDescriptor,
    ToolError,
    ToolRegistry,
)

_NO_ARGS = {"type": "object", "properties": {}, "additionalProperties": False}


def _schema(properties: dict, required: list[str] | None = None) -> dict:
    return {
        "type": "object",
        "properties": properties,
        "required": required or [],
        "additionalProperties": False,
    }


# -- filesystem and search ---------------------------------------------------


def _read_file(ctx: ToolContext, args: dict) -> str:
    path = ctx.resolve_path(args["path"])
    if not path.is_file():
        raise ToolError(f"no such file: {args['path']}")
    text = path.read_text(encoding="utf-8", errors="replace")
    lines = text.splitlines()
    offset = int(args.get("offset", 0))
    limit = int(args.get("limit", 2000))
    window = lines[offset : offset + limit]
    return "\n".join(window)


def _write_file(ctx: ToolContext, args: dict) -> str:
    path = ctx.resolve_path(args["path"], for_write=True)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(args["content"], encoding="utf-8")
    return f"wrote {len(args['content'])} bytes to {args['path']}"


def _list_directory(ctx: ToolContext, args: dict) -> str:
    path = ctx.resolve_path(args.get("path", "."))
    if not path.is_dir():
        raise ToolError(f"not a directory: {args.get('path', '.')}")
    entries = []
    for child in sorted(path.iterdir()):
        suffix = "/" if child.is_dir() else ""
        entries.append(child.name + suffix)
    return "\n".join(entries)


def _file_grep(ctx: ToolContext, args: dict) -> str:
    import re

    pattern = re.compile(args["pattern"])
    root = ctx.resolve_path(args.get("path", "."))
    matches: list[str] = []
    files = [root] if root.is_file() else sorted(
        p for p in root.rglob("*") if p.is_file() and ".git" not in p.parts
    )
    for path in files:
        try:
            text = path.read_text(encoding="utf-8", errors="replace")
        except OSError:
            continue
        rel = path.relative_to(ctx.permissions.sandbox_root.resolve())
        for lineno, line in enumerate(text.splitlines(), start=1):
            if pattern.search(line):
                matches.append(f"{rel}:{lineno}: {line}")
            if len(matches) >= 500:
                matches.append("... (truncated)")
                return "\n".join(matches)
    return "\n".join(matches) if matches else "no matches"


def _search_files(ctx: ToolContext, args: dict) -> str:
    root = ctx.permissions.sandbox_root.resolve()
    hits = sorted(
        str(p.relative_to(root))
        for p in root.rglob(args["glob"])
        if ".git" not in p.parts
    )
    return "\n".join(hits) if hits else "no files match"


def _read_and_summarize(ctx: ToolContext, args: dict) -> str:
    path = ctx.resolve_path(args["path"])
    if not path.is_file():
        raise ToolError(f"no such file: {args['path']}")
    text = path.read_text(encoding="utf-8", errors="replace")
    spawn = ctx.service("spawn")
    summary = spawn(
        "reader",
        "Summarize the following file for an engineer; keep every load-bearing "
        f"detail.\n\n--- {args['path']} ---\n{text[:40000]}",
    )
    return summary


# -- version control ----------------------------------------------------------


def _git(ctx: ToolContext):
    return ctx.service("git"), ctx.permissions.sandbox_root


def _git_status(ctx: ToolContext, args: dict) -> str:
    git, cwd = _git(ctx)
    return git.run("status", "--short", cwd=cwd).stdout or "clean"


def _git_diff(ctx: ToolContext, args: dict) -> str:
    git, cwd = _git(ctx)
    ref = args.get("ref", "HEAD")
    return git.run("diff", ref, cwd=cwd, check=False).stdout or "no changes"


def _git_commit(ctx: ToolContext, args: dict) -> str:
    if not ctx.permissions.can_write:
        raise PermissionDenied("this role cannot commit")
    git, cwd = _git(ctx)
    git.run("add", "-A", cwd=cwd)
    proc = git.run("commit", "-m", args["message"], cwd=cwd, check=False)
    if proc.returncode != 0:
        return f"nothing to commit: {proc.stdout.strip() or proc.stderr.strip()}"
    return git.run("rev-parse", "HEAD", cwd=cwd).stdout.strip()


def _git_log(ctx: ToolContext, args: dict) -> str:
    git, cwd = _git(ctx)
    limit = str(int(args.get("limit", 10)))
    return git.run("log", "--oneline", "-n", limit, cwd=cwd).stdout


# -- task tracker ---------------------------------------------------------------


def _task_add(ctx: ToolContext, args: dict) -> str:
    from ..taskgraph import TaskKind, TaskOrigin

    store = ctx.service("task_store")
    origin = TaskOrigin(ctx.services.get("task_origin", "orchestrator"))
    task_id = store.add_task(
        title=args["title"],
        prompt=args["prompt"],
        kind=TaskKind(args.get("kind", "formalize")),
        dependencies=args.get("dependencies", []),
        priority=int(args.get("priority", 0)),
        racing_width=args.get("racing_width"),
        origin=origin,
        target_refs=args.get("target_refs", []),
        dispatchable=bool(args.get("dispatchable", True)),
    )
    return task_id


def _task_update(ctx: ToolContext, args: dict) -> str:
    store = ctx.service("task_store")
    record = store.update_task(args["id"], **args["patch"])
    return dump_canonical(record.to_payload())


def _task_delete(ctx: ToolContext, args: dict) -> str:
    store = ctx.service("task_store")
    rewire = args.get("rewire") or {}
    store.delete_task(args["id"], rewire={k: list(v) for k, v in rewire.items()})
    return f"deleted {args['id']}"


def _task_list(ctx: ToolContext, args: dict) -> str:
    store = ctx.service("task_store")
    status = args.get("status")
    tasks = [
        t.to_payload()
        for t in store.live_tasks()
        if status is None or t.status.value == status
    ]
    return dump_canonical(tasks)


def _dispatch_ready(ctx: ToolContext, args: dict) -> str:
    store = ctx.service("task_store")
    return dump_canonical(store.ready_set())


def _goal_status(ctx: ToolContext, args: dict) -> str:
    goals = ctx.service("goal_store")
    return dump_canonical(goals.progress_summary())


# -- agent memory, skills, traces --------------------------------------------


def _scratchpad_path(ctx: ToolContext) -> Path:
    root = Path(ctx.service("scratchpad_dir"))
    root.mkdir(parents=True, exist_ok=True)
    return root / f"{ctx.agent_id or 'shared'}.md"


def _scratchpad_read(ctx: ToolContext, args: dict) -> str:
    path = _scratchpad_path(ctx)
    return path.read_text(encoding="utf-8") if path.exists() else ""


def _scratchpad_write(ctx: ToolContext, args: dict) -> str:
    path = _scratchpad_path(ctx)
    path.write_text(args["content"], encoding="utf-8")
    return f"scratchpad saved ({len(args['content'])} bytes)"


def _load_skill(ctx: ToolContext, args: dict) -> str:
    root = Path(ctx.service("skills_dir")).resolve()
    candidate = (root / args["path"]).resolve()
    if candidate != root and root not in candidate.parents:
        raise PermissionDenied(f"skill path escapes the skills directory: {args['path']}")
    if not candidate.is_file():
        return f"no skill guide at {args['path']}"
    return candidate.read_text(encoding="utf-8")


def _inspect_trace(ctx: ToolContext, args: dict) -> str:
    traces = ctx.service("trace_store")
    payload = traces.read(args["conversation_id"])
    if payload is None:
        raise ToolError(f"no trace for conversation {args['conversation_id']}")
    return dump_canonical(payload)


# -- communication -------------------------------------------------------------


def _escalate(ctx: ToolContext, args: dict) -> str:
    inbox = ctx.service("escalations")
    record = inbox.file(
        from_agent=ctx.agent_id,
        task_id=ctx.services.get("task_id", ""),
        severity=args["severity"],
        message=args["message"],
    )
    if args["severity"] == "critical" and "session" in ctx.services:
        from ..agents.runtime import ConversationStatus

        ctx.services["session"].request_stop(ConversationStatus.ESCALATED)
    return f"escalation {record.id} filed"


def _spawn_subagent(ctx: ToolContext, args: dict) -> str:
    spawn = ctx.service("spawn")
    return spawn(args["role"], args["prompt"])


# -- dependency-graph judge queries --------------------------------------------


def _graph(ctx: ToolContext):
    return ctx.service("depgraph")


def _graph_health_summary(ctx: ToolContext, args: dict) -> str:
    return dump_canonical(_graph(ctx).graph_health_summary())


def _sorry_chain(ctx: ToolContext, args: dict) -> str:
    return dump_canonical(_graph(ctx).sorry_chain(args["name"]))


def _suspicious_nodes(ctx: ToolContext, args: dict) -> str:
    return dump_canonical(_graph(ctx).suspicious_nodes())


def _cone_listing(ctx: ToolContext, args: dict) -> str:
    return dump_canonical(_graph(ctx).cone_listing(args["name"]))


_PATH_ARG = {"path": {"type": "string"}}

BUILTIN_TOOLS: list[tuple[ToolDescriptor, object]] = [
    (
        ToolDescriptor(
            "read_file",
            "Read a file inside the sandbox (optionally a line window).",
            _schema(
                {
                    **_PATH_ARG,
                    "offset": {"type": "integer", "minimum": 0},
                    "limit": {"type": "integer", "minimum": 1},
                },
                ["path"],
            ),
            SideEffects.READ_ONLY,
            ToolCategory.FILESYSTEM_SEARCH,
        ),
        _read_file,
    ),
    (
        ToolDescriptor(
            "write_file",
            "Write a file inside the sandbox, creating parent directories.",
            _schema({**_PATH_ARG, "content": {"type": "string"}}, ["path", "content"]),
            SideEffects.MUTATING,
            ToolCategory.FILESYSTEM_SEARCH,
        ),
        _write_file,
    ),
    (
        ToolDescriptor(
            "list_directory",
            "List entries of a sandbox directory.",
            _schema(_PATH_ARG),
            SideEffects.READ_ONLY,
            ToolCategory.FILESYSTEM_SEARCH,
        ),
        _list_directory,
    ),
    (
        ToolDescriptor(
            "file_grep",
            "Regex search over sandbox files; returns file:line: matches.",
            _schema({"pattern": {"type": "string"}, **_PATH_ARG}, ["pattern"]),
            SideEffects.READ_ONLY,
            ToolCategory.FILESYSTEM_SEARCH,
        ),
        _file_grep,
    ),
    (
        ToolDescriptor(
            "search_files",
            "Find sandbox files by glob pattern.",
            _schema({"glob": {"type": "string"}}, ["glob"]),
            SideEffects.READ_ONLY,
            ToolCategory.FILESYSTEM_SEARCH,
        ),
        _search_files,
    ),
    (
        ToolDescriptor(
            "read_and_summarize",
            "Read a file and return a short summary from the reader helper.",
            _schema(_PATH_ARG, ["path"]),
            SideEffects.READ_ONLY,
            ToolCategory.FILESYSTEM_SEARCH,
        ),
        _read_and_summarize,
    ),
    (
        ToolDescriptor(
            "git_status",
            "Working tree status of the sandbox worktree.",
            _NO_ARGS,
            SideEffects.READ_ONLY,
            ToolCategory.VERSION_CONTROL,
        ),
        _git_status,
    ),
    (
        ToolDescriptor(
            "git_diff",
            "Diff of the sandbox worktree against a ref (default HEAD).",
            _schema({"ref": {"type": "string"}}),
            SideEffects.READ_ONLY,
            ToolCategory.VERSION_CONTROL,
        ),
        _git_diff,
    ),
    (
        ToolDescriptor(
            "git_commit",
            "Stage everything and commit with the given message.",
            _schema({"message": {"type": "string"}}, ["message"]),
            SideEffects.MUTATING,
            ToolCategory.VERSION_CONTROL,
        ),
        _git_commit,
    ),
    (
        ToolDescriptor(
            "git_log",
            "Recent commits on the current branch.",
            _schema({"limit": {"type": "integer", "minimum": 1}}),
            SideEffects.READ_ONLY,
            ToolCategory.VERSION_CONTROL,
        ),
        _git_log,
    ),
    (
        ToolDescriptor(
            "task_add",
            "Add a task to the work DAG.",
            _schema(
                {
                    "title": {"type": "string"},
                    "prompt": {"type": "string"},
                    "kind": {
                        "type": "string",
                        "enum": ["formalize", "fix", "decompose-helper", "analysis"],
                    },
                    "dependencies": {"type": "array", "items": {"type": "string"}},
                    "priority": {"type": "integer"},
                    "racing_width": {"type": "integer", "minimum": 1},
                    "target_refs": {"type": "array", "items": {"type": "string"}},
                    "dispatchable": {"type": "boolean"},
                },
                ["title", "prompt"],
            ),
            SideEffects.MUTATING,
            ToolCategory.ORCHESTRATION,
        ),
        _task_add,
    ),
    (
        ToolDescriptor(
            "task_update",
            "Patch mutable fields of a task, including its status.",
            _schema(
                {"id": {"type": "string"}, "patch": {"type": "object"}},
                ["id", "patch"],
            ),
            SideEffects.MUTATING,
            ToolCategory.ORCHESTRATION,
        ),
        _task_update,
    ),
    (
        ToolDescriptor(
            "task_delete",
            "Delete a task, rewiring its dependents' edges.",
            _schema(
                {"id": {"type": "string"}, "rewire": {"type": "object"}},
                ["id"],
            ),
            SideEffects.MUTATING,
            ToolCategory.ORCHESTRATION,
        ),
        _task_delete,
    ),
    (
        ToolDescriptor(
            "task_list",
            "List live tasks, optionally filtered by status.",
            _schema({"status": {"type": "string"}}),
            SideEffects.READ_ONLY,
            ToolCategory.ORCHESTRATION,
        ),
        _task_list,
    ),
    (
        ToolDescriptor(
            "dispatch_ready",
            "Tasks currently ready for dispatch (all dependencies met).",
            _NO_ARGS,
            SideEffects.READ_ONLY,
            ToolCategory.ORCHESTRATION,
        ),
        _dispatch_ready,
    ),
    (
        ToolDescriptor(
            "goal_status",
            "Target-level completion summary from the goal tracker.",
            _NO_ARGS,
            SideEffects.READ_ONLY,
            ToolCategory.ORCHESTRATION,
        ),
        _goal_status,
    ),
    (
        ToolDescriptor(
            "scratchpad_read",
            "Read this agent's persistent notes.",
            _NO_ARGS,
            SideEffects.READ_ONLY,
            ToolCategory.ORCHESTRATION,
        ),
        _scratchpad_read,
    ),
    (
        ToolDescriptor(
            "scratchpad_write",
            "Replace this agent's persistent notes.",
            _schema({"content": {"type": "string"}}, ["content"]),
            SideEffects.MUTATING,
            ToolCategory.ORCHESTRATION,
        ),
        _scratchpad_write,
    ),
    (
        ToolDescriptor(
            "load_skill",
            "Load a guide from the skills directory (e.g. tasks/<id>/guide.md).",
            _schema(_PATH_ARG, ["path"]),
            SideEffects.READ_ONLY,
            ToolCategory.DISCOVERY,
        ),
        _load_skill,
    ),
    (
        ToolDescriptor(
            "inspect_trace",
            "Read a persisted conversation transcript by id.",
            _schema({"conversation_id": {"type": "string"}}, ["conversation_id"]),
            SideEffects.READ_ONLY,
            ToolCategory.ORCHESTRATION,
        ),
        _inspect_trace,
    ),
    (
        ToolDescriptor(
            "escalate",
            "File a structured escalation (infrastructure failures and tool "
            "malfunctions only, never difficult work).",
            _schema(
                {
                    "severity": {
                        "type": "string",
                        "enum": ["info", "warning", "critical"],
                    },
                    "message": {"type": "string"},
                },
                ["severity", "message"],
            ),
            SideEffects.MUTATING,
            ToolCategory.COMMUNICATION,
        ),
        _escalate,
    ),
    (
        ToolDescriptor(
            "spawn_subagent",
            "Run a short-lived helper agent and return its final answer.",
            _schema(
                {"role": {"type": "string"}, "prompt": {"type": "string"}},
                ["role", "prompt"],
            ),
            SideEffects.MUTATING,
            ToolCategory.ORCHESTRATION,
        ),
        _spawn_subagent,
    ),
    (
        ToolDescriptor(
            "graph_health_summary",
            "Dependency-graph health: declaration counts, tags, sorry usage.",
            _NO_ARGS,
            SideEffects.READ_ONLY,
            ToolCategory.EXECUTION,
        ),
        _graph_health_summary,
    ),
    (
        ToolDescriptor(
            "sorry_chain",
            "Chains from a declaration to every sorry in its dependency cone.",
            _schema({"name": {"type": "string"}}, ["name"]),
            SideEffects.READ_ONLY,
            ToolCategory.EXECUTION,
        ),
        _sorry_chain,
    ),
    (
        ToolDescriptor(
            "suspicious_nodes",
            "Declarations carrying structural tags.",
            _NO_ARGS,
            SideEffects.READ_ONLY,
            ToolCategory.EXECUTION,
        ),
        _suspicious_nodes,
    ),
    (
        ToolDescriptor(
            "cone_listing",
            "Members of a declaration's dependency cone.",
            _schema({"name": {"type": "string"}}, ["name"]),
            SideEffects.READ_ONLY,
            ToolCategory.EXECUTION,
        ),
        _cone_listing,
    ),
]


def register_builtin_tools(registry: ToolRegistry) -> None:
    for descriptor, impl in BUILTIN_TOOLS:
        registry.register(descriptor, impl)


def parse_json_args(raw: str) -> dict:
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ToolError(f"arguments are not valid JSON: {exc}") from exc
