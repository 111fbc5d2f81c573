"""Command-line interface.

    formforge init --targets manifest.json --dir RUN_DIR
    formforge run --config RUN_DIR/config/run.json [--serve-port 8400]
    formforge simulate --config ... --seed 42
    formforge eval --workspace PATH --targets manifest.json [--seed 0]
    formforge report [--cost|--goals|--curve] --dir RUN_DIR
    formforge graph --format dot|json --dir RUN_DIR
    formforge serve --port 8400 --dir RUN_DIR [--ui frontend/dist]
    formforge fixtures declgraph|targets --out PATH
"""

from __future__ import annotations

import json
import sys
import threading
from pathlib import Path

import click

from .accounting import UsageMeter
from .agents.roles import materialize_default_configs
from .api.app import RuntimeContext, create_app
from .driver.config import RunConfig, config_from_payload, load_run_config
from .driver.engine import Engine
from .goals import GoalStore
from .taskgraph import TaskStore


@click.group()
def main() -> None:
    """Verification-gated multi-agent formalization engine."""


@main.command()
@click.option("--targets", "targets_path", required=True, type=click.Path(exists=True))
@click.option("--dir", "run_dir", default="runs/run-1", type=click.Path())
@click.option("--mode", default="simulate", type=click.Choice(["simulate", "live"]))
@click.option("--seed", default=7, type=int)
def init(targets_path: str, run_dir: str, mode: str, seed: int) -> None:
    """Scaffold a run directory: role configs, run config, state layout."""
    run_path = Path(run_dir)
    run_path.mkdir(parents=True, exist_ok=True)
    materialize_default_configs(run_path / "config")
    config = RunConfig(
        run_dir=run_path,
        targets_manifest=Path(targets_path),
        mode=mode,
        seed=seed,
    )
    config_path = run_path / "config" / "run.json"
    config.save(config_path)
    click.echo(f"initialized run directory at {run_path}")
    click.echo(f"run config: {config_path}")


def _serve_in_thread(engine: Engine, port: int, ui_dir: Path | None):
    import uvicorn

    app = create_app(RuntimeContext.from_engine(engine), ui_dir=ui_dir)
    server = uvicorn.Server(
        uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    return server


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--serve-port", default=0, type=int, help="attach the control API")
@click.option("--ui", "ui_dir", default=None, type=click.Path())
def run(config_path: str, serve_port: int, ui_dir: str | None) -> None:
    """Run the engine with the given config (live or simulate mode)."""
    config = load_run_config(Path(config_path))
    engine = Engine(config)
    server = None
    if serve_port:
        server = _serve_in_thread(
            engine, serve_port, Path(ui_dir) if ui_dir else None
        )
        click.echo(f"control API on http://127.0.0.1:{serve_port}")
    try:
        report = engine.run()
    finally:
        if server is not None:
            server.should_exit = True
    click.echo(json.dumps(report, indent=2))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--targets", "targets_path", type=click.Path(exists=True))
@click.option("--dir", "run_dir", default="runs/sim-1", type=click.Path())
@click.option("--seed", default=None, type=int)
@click.option("--racing-width", default=None, type=int)
@click.option("--disable-orchestrator-loop", is_flag=True)
@click.option("--disable-supervisor", is_flag=True)
@click.option("--disable-trace-analyzer", is_flag=True)
def simulate(
    config_path: str | None,
    targets_path: str | None,
    run_dir: str,
    seed: int | None,
    racing_width: int | None,
    disable_orchestrator_loop: bool,
    disable_supervisor: bool,
    disable_trace_analyzer: bool,
) -> None:
    """Deterministic scripted run; reproducible for a fixed seed."""
    if config_path:
        overrides: dict = {"mode": "simulate"}
        if seed is not None:
            overrides["seed"] = seed
        config = load_run_config(Path(config_path), **overrides)
    else:
        if not targets_path:
            raise click.UsageError("provide --config or --targets")
        config = config_from_payload(
            {
                "run_dir": run_dir,
                "targets_manifest": targets_path,
                "mode": "simulate",
                "seed": seed if seed is not None else 42,
            }
        )
    if racing_width is not None:
        config.racing_width_default = racing_width
    config.ablations.disable_orchestrator_loop |= disable_orchestrator_loop
    config.ablations.disable_supervisor |= disable_supervisor
    config.ablations.disable_trace_analyzer |= disable_trace_analyzer
    report = Engine(config).run()
    click.echo(json.dumps(report, indent=2))


@main.command("eval")
@click.option("--workspace", required=True, type=click.Path(exists=True))
@click.option("--targets", "targets_path", required=True, type=click.Path(exists=True))
@click.option("--verifier", default="toy")
@click.option("--seed", default=0, type=int, help="seed for scripted agents")
@click.option("--containment", is_flag=True)
@click.option("--out", "out_path", default=None, type=click.Path())
def eval_command(
    workspace: str,
    targets_path: str,
    verifier: str,
    seed: int,
    containment: bool,
    out_path: str | None,
) -> None:
    """Run the evaluation harness standalone over a workspace tree."""
    from .agents.backends import ScriptedBackend
    from .agents.roles import RoleName, default_role_configs
    from .agents.runtime import AgentSession
    from .depgraph import DepGraph
    from .driver.config import SimulateProfile
    from .driver.scripted import ScriptedRoles
    from .evaluation import EvaluationHarness, load_targets_manifest
    from .seeds import DecisionRng
    from .tools.builtins import register_builtin_tools
    from .tools.registry import BoundTools, PermissionSet, ToolContext, ToolRegistry
    from .toylang import export_declarations
    from .verifiers import make_verifier

    manifest = load_targets_manifest(Path(targets_path))
    backend = ScriptedBackend(handler=ScriptedRoles(DecisionRng(seed), SimulateProfile()))
    registry = ToolRegistry()
    register_builtin_tools(registry)
    roles = default_role_configs()
    counter = {"n": 0}

    def factory(role_name, sandbox_root=None, meta=None, extra_services=None, **_kw):
        counter["n"] += 1
        role = roles[RoleName(role_name)]
        ctx = ToolContext(
            permissions=PermissionSet(
                allowed_tools=frozenset(role.toolset) & frozenset(registry.names()),
                sandbox_root=Path(sandbox_root or workspace),
                can_write=False,
            ),
            services=dict(extra_services or {}),
            agent_id=f"{role_name}-{counter['n']}",
        )
        return AgentSession(
            agent_id=ctx.agent_id,
            role=role,
            backend=backend,
            tools=BoundTools(registry, ctx),
            meta=dict(meta or {}),
        )

    harness = EvaluationHarness(
        make_verifier(verifier), factory, collect_containment=containment
    )
    graph = DepGraph.from_document(export_declarations(Path(workspace)), permissive=True)
    report = harness.evaluate_targets(
        list(manifest.targets), Path(workspace), graph, eval_id="eval-cli"
    )
    payload = report.to_payload()
    if out_path:
        Path(out_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        click.echo(f"wrote {out_path}")
    click.echo(f"passed {report.passed_count}/{len(report.verdicts)} targets")
    if not out_path:
        click.echo(json.dumps(payload, indent=2))


@main.command()
@click.option("--dir", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--cost", "show", flag_value="cost")
@click.option("--goals", "show", flag_value="goals")
@click.option("--curve", "show", flag_value="curve")
@click.option("--json", "as_json", is_flag=True)
def report(run_dir: str, show: str | None, as_json: bool) -> None:
    """Cost, goal, and completion-curve reports for a finished run."""
    run_path = Path(run_dir)
    state = run_path / "state"
    if show in (None, "cost"):
        meter = UsageMeter(state)
        cost = meter.aggregate()
        click.echo(json.dumps(cost.to_payload(), indent=2) if as_json
                   else cost.render_text())
    if show in (None, "goals"):
        goals = GoalStore(state)
        click.echo(json.dumps(goals.progress_summary(), indent=2))
    if show in (None, "curve"):
        curve = run_path / "reports" / "curve.csv"
        click.echo(curve.read_text() if curve.exists() else "no curve recorded")


@main.command()
@click.option("--dir", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--format", "fmt", default="json", type=click.Choice(["json", "dot"]))
def graph(run_dir: str, fmt: str) -> None:
    """Export the task DAG as JSON or Graphviz dot."""
    store = TaskStore(Path(run_dir) / "state")
    view = store.graph_view()
    if fmt == "json":
        click.echo(json.dumps(view, indent=2))
        return
    lines = ["digraph tasks {"]
    for node in view["nodes"]:
        lines.append(
            f'  "{node["id"]}" [label="{node["id"]}\\n{node["status"]}"];'
        )
    for edge in view["edges"]:
        lines.append(f'  "{edge["from"]}" -> "{edge["to"]}";')
    lines.append("}")
    click.echo("\n".join(lines))


@main.command()
@click.option("--dir", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--port", default=8400, type=int)
@click.option("--ui", "ui_dir", default="frontend/dist", type=click.Path())
def serve(run_dir: str, port: int, ui_dir: str) -> None:
    """Serve the control API (and dashboard, if built) for a run directory."""
    import uvicorn

    context = RuntimeContext.from_run_dir(Path(run_dir))
    ui = Path(ui_dir) if Path(ui_dir).exists() else None
    app = create_app(context, ui_dir=ui)
    click.echo(f"serving {run_dir} on http://127.0.0.1:{port}")
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="info")


@main.group()
def fixtures() -> None:
    """Generate fixture corpora."""


@fixtures.command()
@click.option("--out", "out_dir", default="fixtures/declgraph", type=click.Path())
def declgraph(out_dir: str) -> None:
    """Write the declaration-graph fixture corpus (cone, tags, random DAGs)."""
    from .depgraph_fixtures import write_fixture_corpus

    written = write_fixture_corpus(Path(out_dir))
    click.echo(f"wrote {len(written)} fixture files under {out_dir}")


@fixtures.command()
@click.option("--out", "out_path", default="fixtures/targets.json", type=click.Path())
@click.option("--count", default=40, type=int)
@click.option("--seed", default=7, type=int)
def targets(out_path: str, count: int, seed: int) -> None:
    """Write a synthetic targets manifest with a layered dependency DAG."""
    from .manifest_fixtures import write_synthetic_manifest

    path = write_synthetic_manifest(Path(out_path), target_count=count, seed=seed)
    click.echo(f"wrote {count} targets to {path}")


if __name__ == "__main__":
    sys.exit(main())
