"""External tool-server adapters.

Proof-assistant-specific tools (interactive REPL, language-server
diagnostics, library search) are not implemented in-process; they are
declared as adapter descriptors that speak line-delimited JSON over a child
process's standard streams:

    request  (stdin):  {"id": n, "tool": name, "args": {...}}
    response (stdout): {"id": n, "ok": true, "result": ...}
                     | {"id": n, "ok": false, "error": "..."}

The harness enforces a per-call timeout with process-tree kill and an
optional memory cap in bytes monitored in the background. A mock adapter
ships for tests (`python -m formforge.tools.mock_adapter`).
"""

from __future__ import annotations

import json
import subprocess
import threading
from pathlib import Path

from .registry import (
    SideEffects,
    ToolCategory,
    ToolContext,
    ToolDescriptor,
    ToolError,
    ToolRegistry,
    ToolTimeout,
)


class AdapterError(ToolError):
    pass


class ExternalToolAdapter:
    """One child process serving a set of declared tools."""

    def __init__(
        self,
        command: list[str],
        cwd: Path | None = None,
        memory_cap_bytes: int | None = None,
        process_registry=None,
    ) -> None:
        self.command = command
        self.cwd = cwd
        self.memory_cap_bytes = memory_cap_bytes
        self.process_registry = process_registry
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()
        self._next_id = 1

    def _ensure_started(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                cwd=str(self.cwd) if self.cwd else None,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
            if self.process_registry is not None:
                self.process_registry.register(
                    self._proc, memory_cap_bytes=self.memory_cap_bytes
                )
        return self._proc

    def call(self, tool: str, args: dict, timeout_s: float) -> object:
        with self._lock:
            proc = self._ensure_started()
            request_id = self._next_id
            self._next_id += 1
            line = json.dumps({"id": request_id, "tool": tool, "args": args})
            try:
                assert proc.stdin is not None and proc.stdout is not None
                proc.stdin.write(line + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self.kill()
                raise AdapterError(f"adapter process unavailable: {exc}") from exc

            response: dict | None = None
            error: Exception | None = None

            def read_response() -> None:
                nonlocal response, error
                try:
                    raw = proc.stdout.readline()
                    if not raw:
                        error = AdapterError("adapter closed its output stream")
                        return
                    response = json.loads(raw)
                except Exception as exc:  # noqa: BLE001 - surfaced below
                    error = exc

            reader = threading.Thread(target=read_response, daemon=True)
            reader.start()
            reader.join(timeout=timeout_s)
            if reader.is_alive():
                self.kill()
                raise ToolTimeout(f"adapter call {tool} exceeded {timeout_s:g}s")
            if error is not None:
                self.kill()
                raise AdapterError(str(error))
            assert response is not None
            if response.get("id") != request_id:
                self.kill()
                raise AdapterError("adapter answered out of order")
            if not response.get("ok"):
                raise AdapterError(str(response.get("error", "adapter error")))
            return response.get("result")

    def kill(self) -> None:
        proc = self._proc
        self._proc = None
        if proc is None or proc.poll() is not None:
            return
        if self.process_registry is not None:
            self.process_registry.terminate_tree(proc.pid)
        else:
            proc.kill()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            pass


def register_adapter_tools(
    registry: ToolRegistry,
    adapter: ExternalToolAdapter,
    tools: list[ToolDescriptor],
) -> None:
    """Expose an adapter's declared tools through the shared registry."""

    for descriptor in tools:
        def impl(ctx: ToolContext, args: dict, _name=descriptor.name) -> str:
            result = adapter.call(_name, args, timeout_s=3600.0)
            return result if isinstance(result, str) else json.dumps(result)

        registry.register(descriptor, impl)


MOCK_ADAPTER_TOOLS = [
    ToolDescriptor(
        name="adapter_echo",
        description="Echo text back through the external adapter.",
        parameters={
            "type": "object",
            "properties": {"text": {"type": "string"}},
            "required": ["text"],
            "additionalProperties": False,
        },
        side_effects=SideEffects.READ_ONLY,
        category=ToolCategory.EXECUTION,
    ),
    ToolDescriptor(
        name="adapter_sleep",
        description="Sleep for a number of seconds (timeout testing).",
        parameters={
            "type": "object",
            "properties": {"seconds": {"type": "number"}},
            "required": ["seconds"],
            "additionalProperties": False,
        },
        side_effects=SideEffects.READ_ONLY,
        category=ToolCategory.EXECUTION,
    ),
]
