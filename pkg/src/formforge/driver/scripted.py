"""Scripted role behaviours for simulate mode.

Every decision is drawn from the run seed via per-decision keys (never a
shared RNG stream), so two runs with the same seed take identical paths and
a crash/resume continues exactly where the outcome table says. Workers
succeed with the profile's per-attempt probability and otherwise either
break the build or smuggle a placeholder (which the reviewer catches with
the configured strictness); matchers grep for the expected declaration;
judges score from the seeded table.
"""

from __future__ import annotations

import json

from ..agents.backends import (
    AssistantMessage,
    Completion,
    ScriptedCall,
    TokenUsage,
    ToolCall,
)
from ..seeds import DecisionRng
from .config import SimulateProfile


def _usage(rng: DecisionRng, call: ScriptedCall, profile: SimulateProfile) -> TokenUsage:
    agent = call.meta.get("agent_id", "agent")
    key = f"usage/{agent}/{call.turn}"
    base = profile.usage_base_tokens
    jitter = profile.usage_jitter_tokens
    return TokenUsage(
        regular_input=base + rng.randint(f"{key}/in", 0, jitter) + 50 * call.turn,
        cache_read=rng.randint(f"{key}/cr", 0, jitter),
        cache_write=rng.randint(f"{key}/cw", 0, jitter // 2),
        output=80 + rng.randint(f"{key}/out", 0, jitter // 2),
    )


def _tools(*calls: ToolCall) -> AssistantMessage:
    return AssistantMessage(content="", tool_calls=tuple(calls))


def _last_tool_content(messages: list[dict]) -> str:
    for message in reversed(messages):
        if message["role"] == "tool":
            return message.get("content") or ""
    return ""


def _declaration_lines(declarations: list[dict], body: str) -> str:
    lines = []
    for decl in declarations:
        if decl.get("axiomatize"):
            lines.append(f"axiom {decl['name']}")
            continue
        refs = decl.get("refs", [])
        uses = f" uses {' '.join(refs)}" if refs else ""
        lines.append(f"theorem {decl['name']}{uses} := {body}")
    return "\n".join(lines) + "\n"


class ScriptedRoles:
    """Deterministic handler for every role, keyed by the run seed."""

    def __init__(self, rng: DecisionRng, profile: SimulateProfile) -> None:
        self.rng = rng
        self.profile = profile

    def __call__(self, call: ScriptedCall) -> Completion:
        handler = getattr(self, f"_{call.role}", None)
        if handler is None:
            message = AssistantMessage(content="acknowledged")
        else:
            message = handler(call)
        return Completion(message=message, usage=_usage(self.rng, call, self.profile))

    # -- execution tier ------------------------------------------------------

    def _worker(self, call: ScriptedCall) -> AssistantMessage:
        meta = call.meta
        task_id = meta["task_id"]
        attempt = meta["attempt_index"]
        declarations = meta.get("declarations", [])
        file_path = meta.get("file", "src/work.fml")
        if call.turn == 1:
            if self.rng.chance(f"worker-escalate/{task_id}/{attempt}",
                               self.profile.escalation_rate):
                return _tools(
                    ToolCall("tc-1-esc", "escalate", {
                        "severity": "critical",
                        "message": "toolchain session unavailable in this worktree",
                    })
                )
            return _tools(
                ToolCall("tc-1-skill", "load_skill",
                         {"path": f"tasks/{task_id}/guide.md"})
            )
        if call.turn == 2:
            success = self.rng.chance(
                f"worker-success/{task_id}/{attempt}", self.profile.worker_success_rate
            )
            if success:
                content = _declaration_lines(declarations, "proof")
            elif self.rng.uniform(f"worker-mode/{task_id}/{attempt}") < 0.5:
                content = (
                    _declaration_lines(declarations, "proof")
                    + "#fail obligation could not be discharged\n"
                )
            else:
                content = _declaration_lines(declarations, "sorry")
            return _tools(
                ToolCall("tc-2-write", "write_file",
                         {"path": file_path, "content": content}),
                ToolCall("tc-2-commit", "git_commit",
                         {"message": f"{task_id}: attempt {attempt} "
                                     f"({meta.get('attempt_id', '')})"}),
            )
        return AssistantMessage(
            content=f"Wrote {file_path} and committed for {task_id}."
        )

    def _reviewer(self, call: ScriptedCall) -> AssistantMessage:
        if call.turn == 1:
            return _tools(ToolCall("tc-1-diff", "git_diff", {"ref": "main"}))
        diff = _last_tool_content(call.messages)
        attempt = call.meta.get("attempt_id", call.meta.get("task_id", ""))
        if "sorry" in diff and self.rng.chance(
            f"review-catch/{attempt}", self.profile.reviewer_strictness
        ):
            return AssistantMessage(
                content="REJECTED: placeholder proof smuggled into the change; "
                        "replace `sorry` with a real proof before resubmitting."
            )
        return AssistantMessage(
            content="APPROVED: builds cleanly and the change matches its target."
        )

    # -- planning tier ----------------------------------------------------------

    def _orchestrator(self, call: ScriptedCall) -> AssistantMessage:
        meta = call.meta
        targets = meta.get("targets", [])
        round_no = meta.get("round", 1)
        if round_no == 1:
            mapped = _task_map_from_messages(call.messages)
            eligible = [
                t for t in targets
                if t["id"] not in mapped
                and all(u in mapped for u in t.get("uses", []))
            ]
            if not eligible:
                directives = meta.get("directives", [])
                note = f" Noted directives: {'; '.join(directives)}" if directives else ""
                return AssistantMessage(
                    content=f"Plan complete: {len(mapped)} tasks in the DAG.{note}"
                )
            calls = []
            for index, target in enumerate(eligible):
                calls.append(
                    ToolCall(
                        f"tc-{call.turn}-{index}",
                        "task_add",
                        {
                            "title": f"formalize {target['id']}",
                            "prompt": (
                                f"Formalize target {target['id']} "
                                f"({target.get('title', '')}). One statement per "
                                "task; read the skill guide first."
                            ),
                            "kind": "formalize",
                            "dependencies": [mapped[u] for u in target.get("uses", [])],
                            "target_refs": [target["id"]],
                            "priority": 0,
                        },
                    )
                )
            return _tools(*calls)
        replannable = meta.get("replannable", [])
        if call.turn == 1 and replannable:
            calls = []
            for index, task in enumerate(replannable):
                calls.append(
                    ToolCall(
                        f"tc-r{round_no}-{index}",
                        "task_update",
                        {
                            "id": task["id"],
                            "patch": {
                                "status": "pending",
                                "prompt": task["prompt"]
                                + f"\nRetry guidance (round {round_no}): read "
                                  "skills/tasks/" + task["id"] + "/guide.md and "
                                  "avoid the failure mode it records.",
                            },
                        },
                    )
                )
            return _tools(*calls)
        directives = meta.get("directives", [])
        note = f" Applying directives: {'; '.join(directives)}" if directives else ""
        return AssistantMessage(
            content=f"Round {round_no} planning done; "
                    f"re-opened {len(replannable)} failed tasks.{note}"
        )

    # -- feedback tier ----------------------------------------------------------

    def _trace_analyzer(self, call: ScriptedCall) -> AssistantMessage:
        meta = call.meta
        task_id = meta["task_id"]
        attempts = meta.get("attempt_count", 0)
        outcomes = meta.get("outcomes", [])
        summary = (
            f"Task {task_id} has {attempts} attempts; recent outcomes: "
            f"{', '.join(outcomes[-3:]) or 'none'}."
        )
        report = {
            "task_id": task_id,
            "status": meta.get("status", "in_progress"),
            "attempt_count": attempts,
            "summary": summary,
            "suggestions": [
                "Re-read the target statement before writing the declaration.",
                "Keep helper declarations public so reviews can trace them.",
                "Avoid placeholder bodies; the reviewer rejects them.",
            ][: 1 + attempts % 3],
            "escalation_recommendation": None,
        }
        if call.turn == 1:
            guide = (
                f"# Guide for {task_id}\n\n"
                f"Previous outcomes: {', '.join(outcomes) or 'none'}.\n"
                "Write the declaration with a real proof body; a `#fail` marker "
                "or a `sorry` body is what sank earlier attempts.\n"
            )
            calls = [
                ToolCall("tc-1-report", "write_file", {
                    "path": f"reports/{task_id}.json",
                    "content": json.dumps(report, indent=2) + "\n",
                }),
                ToolCall("tc-1-guide", "write_file", {
                    "path": f"skills/tasks/{task_id}/guide.md",
                    "content": guide,
                }),
            ]
            if meta.get("dag_actions") and self.rng.chance(
                f"analyzer-decompose/{task_id}", self.profile.decompose_rate
            ):
                calls.append(
                    ToolCall("tc-1-helper", "task_add", {
                        "title": f"helper for {task_id}",
                        "prompt": f"Prove a helper statement unblocking {task_id}.",
                        "kind": "decompose-helper",
                        "target_refs": meta.get("target_refs", []),
                    })
                )
            return _tools(*calls)
        return AssistantMessage(content=json.dumps(report))

    # -- evaluation tier ----------------------------------------------------------

    def _matcher(self, call: ScriptedCall) -> AssistantMessage:
        target_id = call.meta["target_id"]
        decl = f"decl_{target_id}"
        if call.turn == 1:
            return _tools(
                ToolCall("tc-1-grep", "file_grep", {"pattern": rf"\b{decl}\b"})
            )
        hits = _last_tool_content(call.messages)
        if "no matches" in hits or not hits.strip():
            return AssistantMessage(content=json.dumps({
                "declaration": None, "file": None,
                "confidence": "not_found",
                "reasoning": "no declaration names this target",
            }))
        file_hint = hits.splitlines()[0].split(":", 1)[0]
        return AssistantMessage(content=json.dumps({
            "declaration": decl, "file": file_hint,
            "confidence": "high",
            "reasoning": f"declaration {decl} found by search",
        }))

    def _judge(self, call: ScriptedCall) -> AssistantMessage:
        target_id = call.meta.get("target_id", "")
        rubric = call.meta.get("rubric", "")
        if rubric == "containment":
            score = self.rng.randint(f"containment/{target_id}", 1, 5)
            return AssistantMessage(content=json.dumps({
                "score": score,
                "reasoning": "containment estimate from the scripted table",
            }))
        if call.turn == 1:
            return _tools(ToolCall("tc-1-health", "graph_health_summary", {}))
        if self.rng.chance(f"judge-fail/{target_id}/{rubric}",
                           self.profile.judge_fail_rate):
            score = 2
        else:
            score = 3 + self.rng.randint(f"judge-score/{target_id}/{rubric}", 0, 2)
        return AssistantMessage(content=json.dumps({
            "score": score,
            "reasoning": f"scripted {rubric} assessment for {target_id}",
        }))

    def _merge_matcher(self, call: ScriptedCall) -> AssistantMessage:
        refs_by_task = call.meta.get("target_refs_by_task", {})
        affected = sorted({ref for refs in refs_by_task.values() for ref in refs})
        return AssistantMessage(content=json.dumps({
            "affected": affected,
            "reasoning": "targets referenced by the landed tasks",
        }))

    def _triage(self, call: ScriptedCall) -> AssistantMessage:
        target_id = call.meta.get("target_id", "")
        reasons = call.meta.get("failure_reasons", [])[:4]
        tasks = [
            {
                "title": f"fix {target_id}: {reason[:48]}",
                "prompt": f"Repair target {target_id}; address exactly this "
                          f"failure: {reason}",
                "reason": reason,
            }
            for reason in reasons
        ] or [{
            "title": f"fix {target_id}",
            "prompt": f"Repair target {target_id}.",
            "reason": "unspecified failure",
        }]
        return AssistantMessage(content=json.dumps({"tasks": tasks}))

    def _reader(self, call: ScriptedCall) -> AssistantMessage:
        last_user = ""
        for message in reversed(call.messages):
            if message["role"] == "user":
                last_user = message.get("content") or ""
                break
        return AssistantMessage(content="Summary: " + " ".join(last_user.split())[:200])


def _task_map_from_messages(messages: list[dict]) -> dict[str, str]:
    """Recover target-id -> task-id pairs from earlier task_add tool results."""
    results: dict[str, str] = {}
    call_targets: dict[str, str] = {}
    for message in messages:
        if message["role"] == "assistant":
            for tool_call in message.get("tool_calls", []) or []:
                if tool_call.get("name") == "task_add":
                    refs = tool_call.get("arguments", {}).get("target_refs", [])
                    if refs:
                        call_targets[tool_call["id"]] = refs[0]
        elif message["role"] == "tool":
            target = call_targets.get(message.get("tool_call_id", ""))
            content = message.get("content") or ""
            if target and not content.startswith("error") and content.strip():
                results[target] = content.strip()
    return results
