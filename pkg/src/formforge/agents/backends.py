"""Model backends: the live HTTP wire contract and a scripted stand-in.

Wire contract (versioned, JSON over HTTP):

    request:  {"model": str, "messages": [...],
               "tools": [{"name", "description", "parameters": <JSON schema>}],
               "max_output_tokens": int}
    response: {"message": {"role": "assistant", "content": str,
                           "tool_calls": [{"id", "name", "arguments"}]?},
               "usage": {"regular_input", "cache_read", "cache_write",
                         "output"}}

Endpoint and auth come from config or the FORMFORGE_MODEL_URL /
FORMFORGE_MODEL_KEY environment variables. The scripted backend replaces
the model with a deterministic rule set for simulations and tests.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx

MODEL_URL_ENV = "FORMFORGE_MODEL_URL"
MODEL_KEY_ENV = "FORMFORGE_MODEL_KEY"


class BackendError(Exception):
    """The backend failed after bounded retries."""


@dataclass(frozen=True)
class TokenUsage:
    regular_input: int = 0
    cache_read: int = 0
    cache_write: int = 0
    output: int = 0

    def __post_init__(self) -> None:
        for name in ("regular_input", "cache_read", "cache_write", "output"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def input_total(self) -> int:
        return self.regular_input + self.cache_read + self.cache_write


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    arguments: dict


@dataclass(frozen=True)
class AssistantMessage:
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()

    def to_message(self) -> dict:
        message: dict = {"role": "assistant", "content": self.content}
        if self.tool_calls:
            message["tool_calls"] = [
                {"id": c.id, "name": c.name, "arguments": c.arguments}
                for c in self.tool_calls
            ]
        return message


@dataclass(frozen=True)
class Completion:
    message: AssistantMessage
    usage: TokenUsage


class ModelBackend(Protocol):
    """Must be safe for concurrent complete() calls."""

    def complete(
        self,
        messages: list[dict],
        tool_schemas: list[dict],
        meta: dict | None = None,
    ) -> Completion: ...


class HttpBackend:
    """Live backend speaking the documented wire contract."""

    def __init__(
        self,
        model: str,
        url: str | None = None,
        api_key: str | None = None,
        auth_header: str = "x-api-key",
        max_output_tokens: int = 8192,
        timeout_s: float = 300.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.model = model
        self.url = url or os.environ.get(MODEL_URL_ENV, "")
        self.api_key = api_key or os.environ.get(MODEL_KEY_ENV, "")
        self.auth_header = auth_header
        self.max_output_tokens = max_output_tokens
        self._client = httpx.Client(timeout=timeout_s, transport=transport)
        if not self.url:
            raise BackendError(
                f"no model endpoint configured; set {MODEL_URL_ENV} or pass url"
            )

    def complete(
        self,
        messages: list[dict],
        tool_schemas: list[dict],
        meta: dict | None = None,
    ) -> Completion:
        request = {
            "model": self.model,
            "messages": messages,
            "tools": tool_schemas,
            "max_output_tokens": self.max_output_tokens,
        }
        headers = {self.auth_header: self.api_key} if self.api_key else {}
        try:
            response = self._client.post(self.url, json=request, headers=headers)
            response.raise_for_status()
            body = response.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise BackendError(f"model endpoint error: {exc}") from exc
        return _parse_wire_response(body)


def _parse_wire_response(body: dict) -> Completion:
    try:
        message = body["message"]
        usage = body["usage"]
        tool_calls = tuple(
            ToolCall(
                id=c["id"], name=c["name"], arguments=dict(c.get("arguments", {}))
            )
            for c in message.get("tool_calls", [])
        )
        return Completion(
            message=AssistantMessage(
                content=message.get("content", "") or "", tool_calls=tool_calls
            ),
            usage=TokenUsage(
                regular_input=int(usage["regular_input"]),
                cache_read=int(usage["cache_read"]),
                cache_write=int(usage["cache_write"]),
                output=int(usage["output"]),
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BackendError(f"malformed backend response: {exc}") from exc


@dataclass
class ScriptedCall:
    """What a scripted rule sees: the conversation so far plus routing info."""

    role: str
    turn: int
    messages: list[dict]
    meta: dict


ScriptHandler = Callable[[ScriptedCall], Completion]


@dataclass
class ScriptedBackend:
    """Deterministic rule-driven backend for simulations.

    The handler maps (role, turn, conversation, meta) to a completion with
    fabricated usage; with the same inputs it must produce the same output.
    Every call is appended to `call_log` for assertions about backend
    traffic (counts, cancellation latency, racing behaviour).
    """

    handler: ScriptHandler
    call_log: list[ScriptedCall] = field(default_factory=list)
    fail_first_n: int = 0

    def __post_init__(self) -> None:
        self._lock = threading.Lock()
        self._transport_failures = 0

    def complete(
        self,
        messages: list[dict],
        tool_schemas: list[dict],
        meta: dict | None = None,
    ) -> Completion:
        meta = meta or {}
        with self._lock:
            if self._transport_failures < self.fail_first_n:
                self._transport_failures += 1
                raise BackendError("scripted transport failure")
            turn = meta.get("turn", 0)
            call = ScriptedCall(
                role=meta.get("role", ""), turn=turn, messages=list(messages), meta=meta
            )
            self.call_log.append(call)
        return self.handler(call)


def retry_complete(
    backend: ModelBackend,
    messages: list[dict],
    tool_schemas: list[dict],
    meta: dict | None = None,
    attempts: int = 3,
    backoff_s: float = 0.05,
    sleep: Callable[[float], None] = time.sleep,
) -> Completion:
    """Call the backend with bounded exponential-backoff retries."""
    last: BackendError | None = None
    for attempt in range(attempts):
        try:
            return backend.complete(messages, tool_schemas, meta=meta)
        except BackendError as exc:
            last = exc
            if attempt < attempts - 1:
                sleep(backoff_s * (2**attempt))
    raise last if last is not None else BackendError("backend failed")
