from __future__ import annotations

import re
import subprocess
import sys
import time
from pathlib import Path

import psutil
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from formforge.clock import LogicalClock
from formforge.events import EventLog
from formforge.processes import ProcessRegistry
from formforge.tools.adapter import (
    MOCK_ADAPTER_TOOLS,
    AdapterError,
    ExternalToolAdapter,
    register_adapter_tools,
)
from formforge.tools.builtins import register_builtin_tools
from formforge.tools.registry import (
    InvalidArgs,
    PermissionDenied,
    PermissionSet,
    SideEffects,
    ToolCategory,
    ToolContext,
    ToolDescriptor,
    ToolRegistry,
    ToolTimeout,
    UnknownTool,
)


@pytest.fixture
def registry(tmp_path):
    reg = ToolRegistry(
        invocation_log=EventLog(tmp_path / "state" / "tools.jsonl",
                                clock=LogicalClock())
    )
    register_builtin_tools(reg)
    yield reg
    reg.shutdown()


def make_ctx(tmp_path, can_write=True, allowed=None, services=None):
    sandbox = tmp_path / "sandbox"
    sandbox.mkdir(exist_ok=True)
    return ToolContext(
        permissions=PermissionSet(
            allowed_tools=frozenset(allowed or [
                "read_file", "write_file", "list_directory", "file_grep",
                "search_files", "scratchpad_read", "scratchpad_write",
                "load_skill", "escalate",
            ]),
            sandbox_root=sandbox,
            can_write=can_write,
        ),
        services=dict(services or {"scratchpad_dir": str(tmp_path / "scratch"),
                                   "skills_dir": str(tmp_path / "skills")}),
        agent_id="agent-1",
        conversation_id="c-00001",
    )


class TestInvoke:
    def test_read_inside_sandbox(self, registry, tmp_path):
        ctx = make_ctx(tmp_path)
        (ctx.permissions.sandbox_root / "hello.txt").write_text("salut")
        assert registry.invoke("read_file", {"path": "hello.txt"}, ctx, 5) == "salut"

    def test_write_denied_for_read_only_role(self, registry, tmp_path):
        ctx = make_ctx(tmp_path, can_write=False)
        with pytest.raises(PermissionDenied):
            registry.invoke(
                "write_file", {"path": "x.txt", "content": "nope"}, ctx, 5
            )

    def test_unknown_tool(self, registry, tmp_path):
        with pytest.raises(UnknownTool):
            registry.invoke("teleport", {}, make_ctx(tmp_path), 5)

    def test_tool_not_in_permission_set(self, registry, tmp_path):
        ctx = make_ctx(tmp_path, allowed=["read_file"])
        with pytest.raises(PermissionDenied):
            registry.invoke("write_file", {"path": "x", "content": ""}, ctx, 5)

    def test_invalid_args_echo_schema(self, registry, tmp_path):
        with pytest.raises(InvalidArgs) as exc:
            registry.invoke("read_file", {"paths": "x"}, make_ctx(tmp_path), 5)
        assert "properties" in str(exc.value)

    def test_timeout(self, registry, tmp_path):
        slow = ToolDescriptor(
            "slow_tool", "sleeps", {"type": "object"},
            SideEffects.READ_ONLY, ToolCategory.EXECUTION,
        )
        registry.register(slow, lambda ctx, args: time.sleep(5) or "done")
        ctx = make_ctx(tmp_path, allowed=["slow_tool"])
        with pytest.raises(ToolTimeout):
            registry.invoke("slow_tool", {}, ctx, 0.2)

    def test_every_invocation_logged_once(self, registry, tmp_path):
        ctx = make_ctx(tmp_path)
        (ctx.permissions.sandbox_root / "a.txt").write_text("x")
        registry.invoke("read_file", {"path": "a.txt"}, ctx, 5)
        with pytest.raises(UnknownTool):
            registry.invoke("nope", {}, ctx, 5)
        log = tmp_path / "state" / "tools.jsonl"
        import json

        records = [json.loads(l) for l in log.read_text().splitlines()]
        assert len(records) == 2
        assert records[0]["payload"]["outcome"] == "ok"
        assert records[1]["payload"]["outcome"] == "unknown_tool"
        assert all("duration_s" in r["payload"] for r in records)


class TestSchemaValidation:
    # The registry's accept/reject must agree with a reference JSON-schema
    # validator applied directly to the declared schema.
    CORPUS = [
        ("read_file", {"path": "a"}, True),
        ("read_file", {"path": "a", "offset": 3, "limit": 5}, True),
        ("read_file", {}, False),
        ("read_file", {"path": 3}, False),
        ("read_file", {"path": "a", "offset": -1}, False),
        ("read_file", {"path": "a", "bogus": 1}, False),
        ("write_file", {"path": "a", "content": "x"}, True),
        ("write_file", {"path": "a"}, False),
        ("escalate", {"severity": "critical", "message": "m"}, True),
        ("escalate", {"severity": "catastrophic", "message": "m"}, False),
        ("task_add", {"title": "t", "prompt": "p", "racing_width": 0}, False),
        ("task_add", {"title": "t", "prompt": "p", "racing_width": 3}, True),
    ]

    def test_matches_reference_validator_on_corpus(self, registry, tmp_path):
        import jsonschema

        ctx = make_ctx(tmp_path, allowed=[name for name, _a, _v in self.CORPUS])
        (ctx.permissions.sandbox_root / "a").write_text("hello")
        for name, args, _expected in self.CORPUS:
            schema = registry.descriptor(name).parameters
            reference_ok = True
            try:
                jsonschema.validate(args, schema)
            except jsonschema.ValidationError:
                reference_ok = False
            got_invalid_args = False
            try:
                registry.invoke(name, args, ctx, 5)
            except InvalidArgs:
                got_invalid_args = True
            except Exception:
                pass  # later-stage failures (missing services etc.) are fine
            assert got_invalid_args == (not reference_ok), (name, args)

    def test_expected_column_agrees_with_reference(self):
        import jsonschema

        from formforge.tools.builtins import BUILTIN_TOOLS

        schemas = {d.name: d.parameters for d, _impl in BUILTIN_TOOLS}
        for name, args, expected in self.CORPUS:
            ok = True
            try:
                jsonschema.validate(args, schemas[name])
            except jsonschema.ValidationError:
                ok = False
            assert ok == expected, (name, args)


class TestSandbox:
    def test_dotdot_escape_rejected(self, registry, tmp_path):
        (tmp_path / "secret.txt").write_text("hidden")
        ctx = make_ctx(tmp_path)
        with pytest.raises(PermissionDenied):
            registry.invoke("read_file", {"path": "../secret.txt"}, ctx, 5)

    def test_absolute_path_outside_rejected(self, registry, tmp_path):
        ctx = make_ctx(tmp_path)
        with pytest.raises(PermissionDenied):
            registry.invoke("read_file", {"path": "/etc/hostname"}, ctx, 5)

    def test_absolute_path_inside_allowed(self, registry, tmp_path):
        ctx = make_ctx(tmp_path)
        inside = ctx.permissions.sandbox_root / "in.txt"
        inside.write_text("fine")
        assert registry.invoke("read_file", {"path": str(inside)}, ctx, 5) == "fine"

    def test_symlink_escape_rejected(self, registry, tmp_path):
        (tmp_path / "outside.txt").write_text("leak")
        ctx = make_ctx(tmp_path)
        link = ctx.permissions.sandbox_root / "link.txt"
        link.symlink_to(tmp_path / "outside.txt")
        with pytest.raises(PermissionDenied):
            registry.invoke("read_file", {"path": "link.txt"}, ctx, 5)

    @given(
        st.lists(
            st.sampled_from(["..", ".", "x", "deep", "/", "//", "\\", "...."]),
            min_size=1, max_size=6,
        )
    )
    @settings(max_examples=150, deadline=None)
    def test_fuzzed_paths_never_escape(self, parts):
        import tempfile

        tmp_path = Path(tempfile.mkdtemp())
        ctx = make_ctx(tmp_path)
        raw = "/".join(parts)
        try:
            resolved = ctx.resolve_path(raw)
        except PermissionDenied:
            return
        root = ctx.permissions.sandbox_root.resolve()
        assert resolved == root or root in resolved.parents


class TestBuiltins:
    def test_scratchpad_round_trips_bytes(self, registry, tmp_path):
        ctx = make_ctx(tmp_path)
        payload = "notes éà \n\ttabbed"
        registry.invoke("scratchpad_write", {"content": payload}, ctx, 5)
        assert registry.invoke("scratchpad_read", {}, ctx, 5) == payload

    def test_grep_matches_naive_scan_oracle(self, registry, tmp_path):
        ctx = make_ctx(tmp_path)
        root = ctx.permissions.sandbox_root
        (root / "one.txt").write_text("alpha\nbeta target\n")
        (root / "sub").mkdir()
        (root / "sub" / "two.txt").write_text("target here\nnothing\ntarget again\n")
        got = registry.invoke("file_grep", {"pattern": "target"}, ctx, 5)
        expected = []
        for path in sorted(root.rglob("*")):
            if not path.is_file():
                continue
            for lineno, line in enumerate(path.read_text().splitlines(), start=1):
                if re.search("target", line):
                    expected.append(f"{path.relative_to(root)}:{lineno}: {line}")
        assert got.splitlines() == expected

    def test_load_skill_scoped_to_skills_dir(self, registry, tmp_path):
        ctx = make_ctx(tmp_path)
        skills = Path(ctx.services["skills_dir"])
        (skills / "tasks" / "t-1").mkdir(parents=True)
        (skills / "tasks" / "t-1" / "guide.md").write_text("lesson")
        got = registry.invoke("load_skill", {"path": "tasks/t-1/guide.md"}, ctx, 5)
        assert got == "lesson"
        with pytest.raises(PermissionDenied):
            registry.invoke("load_skill", {"path": "../../etc/passwd"}, ctx, 5)

    def test_escalation_surfaces_to_inbox(self, registry, tmp_path):
        from formforge.driver.inbox import EscalationInbox, EscalationStatus

        inbox = EscalationInbox(tmp_path / "state", clock=LogicalClock())
        ctx = make_ctx(tmp_path, services={
            "escalations": inbox,
            "scratchpad_dir": str(tmp_path / "scratch"),
            "skills_dir": str(tmp_path / "skills"),
        })
        out = registry.invoke(
            "escalate",
            {"severity": "critical", "message": "REPL unavailable"},
            ctx, 5,
        )
        assert "esc-0001" in out
        items = inbox.list(EscalationStatus.OPEN)
        assert len(items) == 1 and items[0].severity.value == "critical"

    def test_read_and_summarize_delegates_to_reader(self, registry, tmp_path):
        spawned = []

        def spawn(role, prompt):
            spawned.append(role)
            return "a compact summary"

        ctx = make_ctx(tmp_path, allowed=["read_and_summarize"],
                       services={"spawn": spawn})
        (ctx.permissions.sandbox_root / "big.txt").write_text("lots of text " * 100)
        got = registry.invoke("read_and_summarize", {"path": "big.txt"}, ctx, 10)
        assert got == "a compact summary"
        assert spawned == ["reader"]

    def test_spawn_subagent_links_child_to_parent(self, registry, tmp_path):
        children = []

        def spawn(role, prompt):
            children.append((role, prompt))
            return "child says hi"

        ctx = make_ctx(tmp_path, allowed=["spawn_subagent"], services={"spawn": spawn})
        got = registry.invoke(
            "spawn_subagent", {"role": "reader", "prompt": "summarize X"}, ctx, 5
        )
        assert got == "child says hi"
        assert children == [("reader", "summarize X")]


class TestExternalAdapter:
    def _adapter(self, registry=None):
        return ExternalToolAdapter(
            [sys.executable, "-m", "formforge.tools.mock_adapter"],
            process_registry=registry,
        )

    def test_echo_round_trip(self):
        adapter = self._adapter()
        try:
            assert adapter.call("adapter_echo", {"text": "ping"}, 10) == "ping"
            assert adapter.call("adapter_echo", {"text": "pong"}, 10) == "pong"
        finally:
            adapter.kill()

    def test_error_response_raises(self):
        adapter = self._adapter()
        try:
            with pytest.raises(AdapterError):
                adapter.call("unknown_tool", {}, 10)
        finally:
            adapter.kill()

    def test_timeout_kills_process_tree(self):
        processes = ProcessRegistry()
        adapter = self._adapter(processes)
        try:
            with pytest.raises(ToolTimeout):
                adapter.call("adapter_sleep", {"seconds": 30}, 0.5)
            time.sleep(0.2)
            assert processes.live_pids() == []
        finally:
            adapter.kill()
            processes.teardown()

    def test_registered_adapter_tools_flow_through_registry(self, registry, tmp_path):
        adapter = self._adapter()
        register_adapter_tools(registry, adapter, MOCK_ADAPTER_TOOLS)
        ctx = make_ctx(tmp_path, allowed=["adapter_echo"])
        try:
            got = registry.invoke("adapter_echo", {"text": "via registry"}, ctx, 10)
            assert got == "via registry"
        finally:
            adapter.kill()


class TestProcessRegistry:
    def test_teardown_leaves_no_orphans(self):
        processes = ProcessRegistry()
        procs = [
            subprocess.Popen([sys.executable, "-c", "import time; time.sleep(60)"])
            for _ in range(3)
        ]
        for proc in procs:
            processes.register(proc)
        assert len(processes.live_pids()) == 3
        processes.teardown()
        assert processes.live_pids() == []
        for proc in procs:
            assert proc.poll() is not None

    def test_tree_termination_includes_grandchildren(self):
        processes = ProcessRegistry()
        script = (
            "import subprocess, sys, time;"
            "child = subprocess.Popen([sys.executable, '-c', "
            "'import time; time.sleep(60)']);"
            "print(child.pid, flush=True); time.sleep(60)"
        )
        proc = subprocess.Popen(
            [sys.executable, "-c", script], stdout=subprocess.PIPE, text=True
        )
        processes.register(proc)
        grandchild_pid = int(proc.stdout.readline())
        assert psutil.pid_exists(grandchild_pid)
        processes.teardown()
        time.sleep(0.3)
        assert not psutil.pid_exists(grandchild_pid) or (
            psutil.Process(grandchild_pid).status() == psutil.STATUS_ZOMBIE
        )

    def test_memory_cap_kills_offender(self):
        processes = ProcessRegistry(monitor_interval_s=0.1)
        hog = subprocess.Popen(
            [sys.executable, "-c",
             "import time; x = bytearray(80_000_000); time.sleep(30)"]
        )
        processes.register(hog, memory_cap_bytes=20_000_000)
        deadline = time.time() + 10
        while time.time() < deadline and hog.poll() is None:
            time.sleep(0.1)
        try:
            assert hog.poll() is not None
            assert hog.pid in processes.memory_kills
        finally:
            processes.teardown()
