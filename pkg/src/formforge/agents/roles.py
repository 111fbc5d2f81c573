"""Role configuration: prompts, budgets, toolsets, and model bindings.

Each role is defined declaratively by a prompt file plus a JSON config
(`config/roles/<name>/prompt.md` and `config.json`). Packaged defaults ship
under `formforge/roledata/` and are materialized into a run directory by
`formforge init`; the numbers below are the per-role defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from pathlib import Path

from ..accounting import ModelTier


class RoleName(str, Enum):
    ORCHESTRATOR = "orchestrator"
    WORKER = "worker"
    REVIEWER = "reviewer"
    TRACE_ANALYZER = "trace_analyzer"
    SUPERVISOR = "supervisor"
    TRIAGE = "triage"
    MATCHER = "matcher"
    MERGE_MATCHER = "merge_matcher"
    JUDGE = "judge"
    READER = "reader"


@dataclass(frozen=True)
class RoleConfig:
    name: RoleName
    system_prompt: str
    max_turns: int
    tool_timeout_s: float
    toolset: tuple[str, ...]
    model_ref: str = "default"
    context_budget_tokens: int = 400_000
    compaction_threshold: float = 0.7
    model_tier: ModelTier = ModelTier.FLAGSHIP
    compaction_keep_turns: int = 20

    def __post_init__(self) -> None:
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if not (0 < self.compaction_threshold <= 1):
            raise ValueError("compaction_threshold must be in (0, 1]")


# Turn budgets and tool timeouts per role.
_DEFAULT_BUDGETS: dict[RoleName, dict] = {
    RoleName.ORCHESTRATOR: {"max_turns": 100_000, "tool_timeout_s": 120.0},
    RoleName.WORKER: {"max_turns": 250, "tool_timeout_s": 300.0},
    RoleName.REVIEWER: {"max_turns": 40, "tool_timeout_s": 120.0},
    RoleName.TRACE_ANALYZER: {"max_turns": 100_000, "tool_timeout_s": 120.0},
    RoleName.SUPERVISOR: {"max_turns": 1_000, "tool_timeout_s": 120.0},
    RoleName.TRIAGE: {"max_turns": 100, "tool_timeout_s": 60.0},
    RoleName.MATCHER: {"max_turns": 1_000, "tool_timeout_s": 60.0},
    RoleName.MERGE_MATCHER: {"max_turns": 1_000, "tool_timeout_s": 60.0},
    RoleName.JUDGE: {"max_turns": 1_000, "tool_timeout_s": 60.0},
    RoleName.READER: {"max_turns": 20, "tool_timeout_s": 60.0},
}

_DEFAULT_TOOLSETS: dict[RoleName, tuple[str, ...]] = {
    RoleName.ORCHESTRATOR: (
        "read_file", "list_directory", "file_grep", "search_files",
        "task_add", "task_update", "task_delete", "task_list", "dispatch_ready",
        "goal_status", "scratchpad_read", "scratchpad_write",
        "load_skill", "inspect_trace", "escalate",
    ),
    RoleName.WORKER: (
        "read_file", "write_file", "list_directory", "file_grep", "search_files",
        "read_and_summarize", "git_status", "git_diff", "git_commit", "git_log",
        "load_skill", "scratchpad_read", "scratchpad_write",
        "escalate", "spawn_subagent",
    ),
    RoleName.REVIEWER: (
        "read_file", "list_directory", "file_grep", "search_files",
        "git_status", "git_diff", "git_log", "load_skill",
    ),
    RoleName.TRACE_ANALYZER: (
        "read_file", "write_file", "list_directory", "file_grep", "search_files",
        "inspect_trace", "task_add", "task_list", "escalate",
    ),
    RoleName.SUPERVISOR: ("read_file", "list_directory", "file_grep"),
    RoleName.TRIAGE: ("read_file", "list_directory", "file_grep", "task_add"),
    RoleName.MATCHER: ("read_file", "list_directory", "file_grep", "search_files"),
    RoleName.MERGE_MATCHER: ("read_file", "list_directory", "file_grep", "search_files"),
    RoleName.JUDGE: (
        "read_file", "list_directory", "file_grep", "search_files",
        "graph_health_summary", "sorry_chain", "suspicious_nodes", "cone_listing",
    ),
    RoleName.READER: ("read_file", "list_directory"),
}

_SMALL_TIER_ROLES = {RoleName.READER}


def _packaged_prompt(role: RoleName) -> str:
    try:
        root = resources.files("formforge").joinpath(f"roledata/{role.value}/prompt.md")
        return root.read_text(encoding="utf-8")
    except (FileNotFoundError, ModuleNotFoundError):
        return f"You are the {role.value} agent."


def default_role_configs() -> dict[RoleName, RoleConfig]:
    configs: dict[RoleName, RoleConfig] = {}
    for role in RoleName:
        budgets = _DEFAULT_BUDGETS[role]
        configs[role] = RoleConfig(
            name=role,
            system_prompt=_packaged_prompt(role),
            max_turns=budgets["max_turns"],
            tool_timeout_s=budgets["tool_timeout_s"],
            toolset=_DEFAULT_TOOLSETS[role],
            model_tier=(
                ModelTier.SMALL if role in _SMALL_TIER_ROLES else ModelTier.FLAGSHIP
            ),
        )
    return configs


def load_role_configs(config_dir: Path) -> dict[RoleName, RoleConfig]:
    """Overlay `config/roles/<name>/{prompt.md,config.json}` on the defaults."""
    configs = default_role_configs()
    roles_dir = Path(config_dir) / "roles"
    if not roles_dir.exists():
        return configs
    for role in RoleName:
        role_dir = roles_dir / role.value
        base = configs[role]
        prompt_path = role_dir / "prompt.md"
        if prompt_path.exists():
            base = replace(base, system_prompt=prompt_path.read_text(encoding="utf-8"))
        config_path = role_dir / "config.json"
        if config_path.exists():
            overrides = json.loads(config_path.read_text(encoding="utf-8"))
            known = {
                "max_turns", "tool_timeout_s", "model_ref", "context_budget_tokens",
                "compaction_threshold", "model_tier", "toolset", "compaction_keep_turns",
            }
            unknown = set(overrides) - known
            if unknown:
                raise ValueError(
                    f"unknown keys in {config_path}: {sorted(unknown)}"
                )
            if "model_tier" in overrides:
                overrides["model_tier"] = ModelTier(overrides["model_tier"])
            if "toolset" in overrides:
                overrides["toolset"] = tuple(overrides["toolset"])
            base = replace(base, **overrides)
        configs[role] = base
    return configs


def materialize_default_configs(config_dir: Path) -> None:
    """Write packaged role prompts, configs, and rubrics into a run's config dir."""
    rubrics_dir = Path(config_dir) / "rubrics"
    rubrics_dir.mkdir(parents=True, exist_ok=True)
    for rubric in ("faithfulness", "proof_integrity", "code_quality", "containment"):
        try:
            text = (
                resources.files("formforge")
                .joinpath(f"roledata/judge/rubric_{rubric}.md")
                .read_text(encoding="utf-8")
            )
        except FileNotFoundError:
            continue
        (rubrics_dir / f"{rubric}.md").write_text(text, encoding="utf-8")
    roles_dir = Path(config_dir) / "roles"
    for role, config in default_role_configs().items():
        role_dir = roles_dir / role.value
        role_dir.mkdir(parents=True, exist_ok=True)
        (role_dir / "prompt.md").write_text(config.system_prompt, encoding="utf-8")
        (role_dir / "config.json").write_text(
            json.dumps(
                {
                    "max_turns": config.max_turns,
                    "tool_timeout_s": config.tool_timeout_s,
                    "model_ref": config.model_ref,
                    "context_budget_tokens": config.context_budget_tokens,
                    "compaction_threshold": config.compaction_threshold,
                    "model_tier": config.model_tier.value,
                    "toolset": list(config.toolset),
                },
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )
