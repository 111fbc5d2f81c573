"""The agent turn loop.

One AgentSession owns one conversation: it calls the backend, executes any
requested tool calls sequentially (each under the role's tool timeout),
appends results, and repeats until the assistant answers without tool
calls, the turn budget runs out, cancellation is observed (between turns
and between tool calls), or the backend errors out after bounded retries.
Usage from every completion is metered exactly once. When the estimated
context crosses the role's compaction threshold, the oldest non-system
messages are folded into a single summary message.

Sessions are resumable: appending a follow-up user message and calling
run() again continues the same conversation, which is how bounded
re-prompts for malformed structured responses are implemented.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol

from ..accounting import UsageEvent, UsageMeter
from .backends import (
    AssistantMessage,
    BackendError,
    Completion,
    ModelBackend,
    TokenUsage,
    retry_complete,
)
from .protocol import (
    MalformedPayload,
    MalformedVerdict,
    ReviewVerdict,
    parse_json_payload,
    parse_reviewer_verdict,
)
from .roles import RoleConfig


class ConversationStatus(str, Enum):
    RUNNING = "running"
    FINISHED = "finished"
    BUDGET_EXHAUSTED = "budget_exhausted"
    ESCALATED = "escalated"
    CANCELLED = "cancelled"
    BACKEND_ERROR = "backend_error"


class CancelToken:
    def __init__(self) -> None:
        self._event = threading.Event()

    def cancel(self) -> None:
        self._event.set()

    @property
    def cancelled(self) -> bool:
        return self._event.is_set()


@dataclass
class ToolResult:
    text: str
    ok: bool = True


class ToolRunner(Protocol):
    def schemas(self) -> list[dict]: ...

    def invoke(self, name: str, arguments: dict, timeout_s: float) -> ToolResult: ...


class NullToolRunner:
    def schemas(self) -> list[dict]:
        return []

    def invoke(self, name: str, arguments: dict, timeout_s: float) -> ToolResult:
        return ToolResult(text=f"unknown tool: {name}", ok=False)


@dataclass
class Conversation:
    messages: list[dict] = field(default_factory=list)
    turn_count: int = 0
    status: ConversationStatus = ConversationStatus.RUNNING
    usage_total: TokenUsage = TokenUsage()

    def add_usage(self, usage: TokenUsage) -> None:
        self.usage_total = TokenUsage(
            regular_input=self.usage_total.regular_input + usage.regular_input,
            cache_read=self.usage_total.cache_read + usage.cache_read,
            cache_write=self.usage_total.cache_write + usage.cache_write,
            output=self.usage_total.output + usage.output,
        )

    def final_text(self) -> str:
        for message in reversed(self.messages):
            if message["role"] == "assistant" and message.get("content"):
                return message["content"]
        return ""


@dataclass
class AgentResult:
    status: ConversationStatus
    conversation: Conversation
    usage_total: TokenUsage


def estimate_message_tokens(message: dict) -> int:
    size = len(message.get("content") or "")
    for call in message.get("tool_calls", []) or []:
        size += len(str(call))
    return max(1, size // 4)


ELISION_MARKER = "[earlier conversation elided]"


class AgentSession:
    """One agent execution; owned by a single thread at a time."""

    def __init__(
        self,
        agent_id: str,
        role: RoleConfig,
        backend: ModelBackend,
        tools: ToolRunner | None = None,
        meter: UsageMeter | None = None,
        cancel: CancelToken | None = None,
        summarizer: Callable[[str], str] | None = None,
        on_turn: Callable[["AgentSession"], None] | None = None,
        model_permit: Callable[[], "ContextLike"] | None = None,
        meta: dict | None = None,
        inbox_check: Callable[[], list[str]] | None = None,
    ) -> None:
        self.agent_id = agent_id
        self.role = role
        self.backend = backend
        self.tools = tools or NullToolRunner()
        self.meter = meter
        self.cancel = cancel or CancelToken()
        self.summarizer = summarizer
        self.on_turn = on_turn
        self.model_permit = model_permit
        self.meta = dict(meta or {})
        # Polled between turns; delivers operator answers to a still-live
        # conversation (e.g. replies to this agent's escalations).
        self.inbox_check = inbox_check
        self.conversation = Conversation(
            messages=[{"role": "system", "content": role.system_prompt}]
        )
        self._last_input_tokens = 0
        self._appended_since_completion = 0
        self._stop_requested: ConversationStatus | None = None

    # -- message plumbing ---------------------------------------------------

    def post_user(self, content: str) -> None:
        self._append({"role": "user", "content": content})
        if self.conversation.status is not ConversationStatus.RUNNING:
            self.conversation.status = ConversationStatus.RUNNING

    def _append(self, message: dict) -> None:
        self.conversation.messages.append(message)
        self._appended_since_completion += estimate_message_tokens(message)

    def request_stop(self, status: ConversationStatus) -> None:
        """Used by tools (critical escalations) to end the loop after this turn."""
        self._stop_requested = status

    @property
    def estimated_context_tokens(self) -> int:
        return self._last_input_tokens + self._appended_since_completion

    # -- the loop -------------------------------------------------------------

    def run(self, initial_user: str | None = None) -> AgentResult:
        if initial_user is not None:
            self.post_user(initial_user)
        conv = self.conversation
        while conv.status is ConversationStatus.RUNNING:
            if self.cancel.cancelled:
                conv.status = ConversationStatus.CANCELLED
                break
            if conv.turn_count >= self.role.max_turns:
                conv.status = ConversationStatus.BUDGET_EXHAUSTED
                break
            if self.inbox_check is not None:
                for note in self.inbox_check():
                    self._append({"role": "user", "content": note})
            self._maybe_compact()
            conv.turn_count += 1
            try:
                completion = self._complete()
            except BackendError:
                conv.status = ConversationStatus.BACKEND_ERROR
                break
            self._record(completion)
            message = completion.message
            self._append(message.to_message())
            if message.tool_calls:
                interrupted = self._execute_tools(message)
                if interrupted:
                    conv.status = ConversationStatus.CANCELLED
                    break
            if self._stop_requested is not None:
                conv.status = self._stop_requested
                break
            if not message.tool_calls:
                conv.status = ConversationStatus.FINISHED
                break
            if self.on_turn is not None:
                self.on_turn(self)
        if self.on_turn is not None:
            self.on_turn(self)
        return AgentResult(
            status=conv.status, conversation=conv, usage_total=conv.usage_total
        )

    def _complete(self) -> Completion:
        meta = dict(self.meta)
        meta.update(
            {
                "role": self.role.name.value,
                "turn": self.conversation.turn_count,
                "agent_id": self.agent_id,
            }
        )
        permit = self.model_permit() if self.model_permit else _NULL_CONTEXT
        with permit:
            return retry_complete(
                self.backend,
                self.conversation.messages,
                self.tools.schemas(),
                meta=meta,
            )

    def _record(self, completion: Completion) -> None:
        self.conversation.add_usage(completion.usage)
        self._last_input_tokens = completion.usage.input_total
        self._appended_since_completion = max(1, completion.usage.output)
        if self.meter is not None:
            self.meter.record(
                UsageEvent(
                    agent_id=self.agent_id,
                    role=self.role.name.value,
                    model_tier=self.role.model_tier,
                    regular_input=completion.usage.regular_input,
                    cache_read=completion.usage.cache_read,
                    cache_write=completion.usage.cache_write,
                    output=completion.usage.output,
                )
            )

    def _execute_tools(self, message: AssistantMessage) -> bool:
        """Run requested tool calls in order; True if cancelled midway."""
        for index, call in enumerate(message.tool_calls):
            if index > 0 and self.cancel.cancelled:
                return True
            result = self.tools.invoke(
                call.name, call.arguments, timeout_s=self.role.tool_timeout_s
            )
            self._append(
                {
                    "role": "tool",
                    "tool_call_id": call.id,
                    "content": result.text if result.ok else f"error: {result.text}",
                }
            )
        return self.cancel.cancelled

    # -- compaction -----------------------------------------------------------

    def _maybe_compact(self) -> None:
        threshold = self.role.compaction_threshold * self.role.context_budget_tokens
        if self.estimated_context_tokens < threshold:
            return
        self.compact()

    def compact(self) -> None:
        """Fold the oldest non-system messages into one summary message.

        The system prompt and the most recent `compaction_keep_turns`
        assistant turns are preserved verbatim; compaction always strictly
        reduces the estimated context size.
        """
        conv = self.conversation
        messages = conv.messages
        if not messages or messages[0]["role"] != "system":
            return
        keep_from = _keep_boundary(messages, self.role.compaction_keep_turns)
        middle = messages[1:keep_from]
        if not middle:
            return
        dropped_chars = sum(len(m.get("content") or "") for m in middle)
        summary_text: str | None = None
        if self.summarizer is not None:
            try:
                raw = "\n".join(
                    f"[{m['role']}] {m.get('content') or ''}" for m in middle
                )
                summary_text = self.summarizer(raw)
            except Exception:
                summary_text = None
        if summary_text is None:
            summary_text = ELISION_MARKER
        cap = max(64, dropped_chars // 8)
        summary_text = summary_text[:cap]
        summary = {
            "role": "user",
            "content": f"[conversation summary] {summary_text}",
        }
        conv.messages = [messages[0], summary] + messages[keep_from:]
        removed = sum(estimate_message_tokens(m) for m in middle)
        added = estimate_message_tokens(summary)
        self._last_input_tokens = max(0, self._last_input_tokens - removed + added)


def _keep_boundary(messages: list[dict], keep_turns: int) -> int:
    """Index of the first message kept verbatim after the system prompt.

    Walks back `keep_turns` assistant turns; with fewer turns than that the
    whole conversation is kept and compaction is a no-op.
    """
    assistant_seen = 0
    for index in range(len(messages) - 1, 0, -1):
        if messages[index]["role"] == "assistant":
            assistant_seen += 1
            if assistant_seen >= keep_turns:
                return index
    return 1


class _NullContextManager:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


_NULL_CONTEXT = _NullContextManager()


class ContextLike(Protocol):
    def __enter__(self): ...

    def __exit__(self, *exc) -> bool | None: ...


# -- structured-response helpers ------------------------------------------


def request_review_verdict(session: AgentSession, prompt: str) -> ReviewVerdict:
    """Run a reviewer; one re-prompt on malformed output, then treat the raw
    text as a rejection."""
    result = session.run(prompt)
    try:
        return parse_reviewer_verdict(result.conversation.final_text())
    except MalformedVerdict:
        result = session.run(
            "Your answer must start with either `APPROVED: <reason>` or "
            "`REJECTED: <specific feedback>`. Answer again in that format."
        )
        try:
            return parse_reviewer_verdict(result.conversation.final_text())
        except MalformedVerdict:
            return ReviewVerdict(
                approved=False, feedback=result.conversation.final_text()
            )


def request_json_payload(
    session: AgentSession,
    prompt: str,
    required: dict | None = None,
    enums: dict | None = None,
    reprompts: int = 2,
) -> dict:
    """Run an agent expected to answer with a JSON object; bounded re-prompts
    on malformed output, then the error surfaces to the caller."""
    result = session.run(prompt)
    attempt = 0
    while True:
        try:
            return parse_json_payload(
                result.conversation.final_text(), required=required, enums=enums
            )
        except MalformedPayload as exc:
            if attempt >= reprompts:
                raise
            attempt += 1
            result = session.run(
                f"Your previous answer was not usable ({exc}). Respond with a "
                "single JSON object containing the required fields."
            )
