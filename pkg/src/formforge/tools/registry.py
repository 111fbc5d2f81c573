"""Tool registry: declared schemas, permission enforcement, timeouts.

Every tool is declared with a JSON-schema for its arguments, a side-effect
class, and a category. Invocation validates arguments against the schema,
enforces the caller's permission set (allowed tool names, filesystem
sandbox root, write flag), runs the implementation under a timeout, and
records exactly one entry per invocation in the invocation log with
duration and outcome.
"""

from __future__ import annotations

import threading
from concurrent.futures import Future, ThreadPoolExecutor, TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

import jsonschema

from ..clock import Clock, WallClock
from ..events import EventLog, dump_canonical


class ToolError(Exception):
    pass


class UnknownTool(ToolError):
    pass


class PermissionDenied(ToolError):
    pass


class InvalidArgs(ToolError):
    def __init__(self, message: str, schema: dict) -> None:
        super().__init__(f"{message}; expected schema: {dump_canonical(schema)}")
        self.schema = schema


class ToolTimeout(ToolError):
    pass


class SideEffects(str, Enum):
    READ_ONLY = "read_only"
    MUTATING = "mutating"


class ToolCategory(str, Enum):
    EXECUTION = "execution"
    FILESYSTEM_SEARCH = "filesystem_search"
    VERSION_CONTROL = "version_control"
    ORCHESTRATION = "orchestration"
    COMMUNICATION = "communication"
    DISCOVERY = "discovery"


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    parameters: dict
    side_effects: SideEffects
    category: ToolCategory

    def schema_payload(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": self.parameters,
        }


@dataclass(frozen=True)
class PermissionSet:
    allowed_tools: frozenset[str]
    sandbox_root: Path
    can_write: bool


@dataclass
class ToolContext:
    """Per-caller context handed to tool implementations."""

    permissions: PermissionSet
    services: dict = field(default_factory=dict)
    agent_id: str = ""
    conversation_id: str = ""

    def service(self, name: str):
        if name not in self.services:
            raise ToolError(f"tool requires unavailable service {name!r}")
        return self.services[name]

    def resolve_path(self, raw: str, for_write: bool = False) -> Path:
        """Resolve a path argument inside the sandbox root or refuse."""
        if for_write and not self.permissions.can_write:
            raise PermissionDenied("this role has read-only filesystem access")
        root = self.permissions.sandbox_root.resolve()
        candidate = Path(raw)
        if not candidate.is_absolute():
            candidate = root / candidate
        resolved = candidate.resolve()
        if resolved != root and root not in resolved.parents:
            raise PermissionDenied(f"path escapes the sandbox: {raw}")
        return resolved


ToolImpl = Callable[[ToolContext, dict], str]


class ToolRegistry:
    """Registered tools plus the shared invocation machinery."""

    def __init__(
        self,
        invocation_log: EventLog | None = None,
        clock: Clock | None = None,
        max_workers: int = 16,
    ) -> None:
        self.clock = clock or WallClock()
        self._tools: dict[str, tuple[ToolDescriptor, ToolImpl]] = {}
        self._log = invocation_log
        self._executor = ThreadPoolExecutor(
            max_workers=max_workers, thread_name_prefix="tool"
        )
        self._lock = threading.Lock()
        self._validators: dict[str, jsonschema.Validator] = {}

    def register(self, descriptor: ToolDescriptor, impl: ToolImpl) -> None:
        with self._lock:
            if descriptor.name in self._tools:
                raise ValueError(f"tool already registered: {descriptor.name}")
            jsonschema.Draft202012Validator.check_schema(descriptor.parameters)
            self._tools[descriptor.name] = (descriptor, impl)
            self._validators[descriptor.name] = jsonschema.Draft202012Validator(
                descriptor.parameters
            )

    def descriptor(self, name: str) -> ToolDescriptor:
        if name not in self._tools:
            raise UnknownTool(name)
        return self._tools[name][0]

    def names(self) -> list[str]:
        return sorted(self._tools)

    def schemas_for(self, allowed: frozenset[str]) -> list[dict]:
        return [
            descriptor.schema_payload()
            for name, (descriptor, _impl) in sorted(self._tools.items())
            if name in allowed
        ]

    def invoke(
        self,
        name: str,
        arguments: dict,
        ctx: ToolContext,
        timeout_s: float,
    ) -> str:
        """Execute one tool call; raises the structured errors documented above."""
        started = self.clock.now()
        outcome = "ok"
        try:
            if name not in self._tools:
                outcome = "unknown_tool"
                raise UnknownTool(name)
            descriptor, impl = self._tools[name]
            if name not in ctx.permissions.allowed_tools:
                outcome = "permission_denied"
                raise PermissionDenied(f"tool {name} not granted to this role")
            if (
                descriptor.side_effects is SideEffects.MUTATING
                and descriptor.category is ToolCategory.FILESYSTEM_SEARCH
                and not ctx.permissions.can_write
            ):
                outcome = "permission_denied"
                raise PermissionDenied("this role has read-only filesystem access")
            errors = sorted(
                self._validators[name].iter_errors(arguments), key=lambda e: e.path
            )
            if errors:
                outcome = "invalid_args"
                raise InvalidArgs(errors[0].message, descriptor.parameters)
            future: Future = self._executor.submit(impl, ctx, arguments)
            try:
                return future.result(timeout=timeout_s)
            except FutureTimeout:
                outcome = "timeout"
                future.cancel()
                raise ToolTimeout(f"tool {name} exceeded {timeout_s:g}s") from None
            except ToolError as exc:
                outcome = type(exc).__name__
                raise
            except Exception as exc:
                outcome = "error"
                raise ToolError(f"tool {name} failed: {exc}") from exc
        finally:
            if self._log is not None:
                self._log.append(
                    "tool_invoked",
                    {
                        "tool": name,
                        "agent_id": ctx.agent_id,
                        "conversation_id": ctx.conversation_id,
                        "duration_s": max(0.0, self.clock.now() - started),
                        "outcome": outcome,
                    },
                )

    def shutdown(self) -> None:
        self._executor.shutdown(wait=False, cancel_futures=True)


class BoundTools:
    """Adapter giving one AgentSession its permitted slice of the registry."""

    def __init__(
        self,
        registry: ToolRegistry,
        ctx: ToolContext,
        tool_permit: Callable[[], object] | None = None,
    ) -> None:
        self.registry = registry
        self.ctx = ctx
        self.tool_permit = tool_permit

    def schemas(self) -> list[dict]:
        return self.registry.schemas_for(self.ctx.permissions.allowed_tools)

    def invoke(self, name: str, arguments: dict, timeout_s: float):
        from ..agents.runtime import ToolResult

        permit = self.tool_permit() if self.tool_permit else None
        try:
            if permit is not None:
                permit.__enter__()
            try:
                text = self.registry.invoke(name, arguments, self.ctx, timeout_s)
                return ToolResult(text=text, ok=True)
            finally:
                if permit is not None:
                    permit.__exit__(None, None, None)
        except ToolError as exc:
            return ToolResult(text=str(exc), ok=False)
