"""Run configuration: one declarative JSON file plus environment overrides.

Environment variables: FORMFORGE_MODEL_URL and FORMFORGE_MODEL_KEY bind the
live model endpoint; FORMFORGE_STATE_DIR overrides the run directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

RUN_DIR_ENV = "FORMFORGE_STATE_DIR"


@dataclass
class AblationFlags:
    disable_orchestrator_loop: bool = False
    disable_supervisor: bool = False
    disable_trace_analyzer: bool = False

    def to_payload(self) -> dict:
        return {
            "disable_orchestrator_loop": self.disable_orchestrator_loop,
            "disable_supervisor": self.disable_supervisor,
            "disable_trace_analyzer": self.disable_trace_analyzer,
        }


@dataclass
class SimulateProfile:
    """Knobs for the scripted backend in simulate mode."""

    worker_success_rate: float = 0.6
    reviewer_strictness: float = 1.0  # chance a smuggled placeholder is caught
    judge_fail_rate: float = 0.0
    escalation_rate: float = 0.0
    decompose_rate: float = 0.0  # chance the analyzer files a helper task
    usage_base_tokens: int = 800
    usage_jitter_tokens: int = 400

    def to_payload(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class RunConfig:
    run_dir: Path
    targets_manifest: Path
    mode: str = "simulate"  # "live" | "simulate"
    seed: int | None = None
    racing_width_default: int = 1
    max_concurrent_model_calls: int = 8
    max_concurrent_tool_calls: int = 16
    merge_batch_size: int = 8
    max_attempts_per_task: int = 5
    max_rounds: int = 60
    ablations: AblationFlags = field(default_factory=AblationFlags)
    simulate: SimulateProfile = field(default_factory=SimulateProfile)
    verifier: str = "toy"
    backend_flagship: str = "scripted"
    backend_small: str = "scripted"
    model_url: str | None = None
    model_key: str | None = None
    collect_containment: bool = False
    final_full_eval: bool = False
    legitimate_axioms: tuple[str, ...] = ()
    analyzer_dag_actions: bool = True
    # Test hook: raise SimulatedCrash after this many store events.
    crash_after_events: int | None = None

    def __post_init__(self) -> None:
        # Absolute paths: git subprocesses run with varying working dirs.
        self.run_dir = Path(self.run_dir).resolve()
        self.targets_manifest = Path(self.targets_manifest).resolve()
        if self.mode not in ("live", "simulate"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "simulate" and self.seed is None:
            raise ValueError("simulate mode requires a seed")
        for cap in (self.max_concurrent_model_calls, self.max_concurrent_tool_calls):
            if cap < 1:
                raise ValueError("concurrency caps must be >= 1")

    # -- derived paths -------------------------------------------------------

    @property
    def state_dir(self) -> Path:
        return self.run_dir / "state"

    @property
    def repo_dir(self) -> Path:
        return self.run_dir / "repo"

    @property
    def worktrees_dir(self) -> Path:
        return self.run_dir / "worktrees"

    @property
    def reports_dir(self) -> Path:
        return self.run_dir / "reports"

    @property
    def skills_dir(self) -> Path:
        return self.run_dir / "skills"

    @property
    def scratch_dir(self) -> Path:
        return self.run_dir / "scratch"

    @property
    def config_dir(self) -> Path:
        return self.run_dir / "config"

    @property
    def traces_dir(self) -> Path:
        return self.state_dir / "traces"

    def to_payload(self) -> dict:
        return {
            "run_dir": str(self.run_dir),
            "targets_manifest": str(self.targets_manifest),
            "mode": self.mode,
            "seed": self.seed,
            "racing_width_default": self.racing_width_default,
            "max_concurrent_model_calls": self.max_concurrent_model_calls,
            "max_concurrent_tool_calls": self.max_concurrent_tool_calls,
            "merge_batch_size": self.merge_batch_size,
            "max_attempts_per_task": self.max_attempts_per_task,
            "max_rounds": self.max_rounds,
            "ablations": self.ablations.to_payload(),
            "simulate": self.simulate.to_payload(),
            "verifier": self.verifier,
            "backend_flagship": self.backend_flagship,
            "backend_small": self.backend_small,
            "collect_containment": self.collect_containment,
            "final_full_eval": self.final_full_eval,
            "legitimate_axioms": list(self.legitimate_axioms),
            "analyzer_dag_actions": self.analyzer_dag_actions,
        }

    def save(self, path: Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_payload(), indent=2) + "\n", encoding="utf-8"
        )


def load_run_config(path: Path, **overrides) -> RunConfig:
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    document.update(overrides)
    return config_from_payload(document)


def config_from_payload(document: dict) -> RunConfig:
    document = dict(document)
    ablations = AblationFlags(**document.pop("ablations", {}))
    simulate = SimulateProfile(**document.pop("simulate", {}))
    run_dir = os.environ.get(RUN_DIR_ENV) or document.pop("run_dir")
    document.pop("model_url", None)
    document.pop("model_key", None)
    if "legitimate_axioms" in document:
        document["legitimate_axioms"] = tuple(document["legitimate_axioms"])
    return RunConfig(
        run_dir=Path(run_dir),
        targets_manifest=Path(document.pop("targets_manifest")),
        ablations=ablations,
        simulate=simulate,
        model_url=os.environ.get("FORMFORGE_MODEL_URL"),
        model_key=os.environ.get("FORMFORGE_MODEL_KEY"),
        **document,
    )
