from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from formforge.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def test_fixtures_targets_and_declgraph(runner, tmp_path):
    result = runner.invoke(main, [
        "fixtures", "targets", "--out", str(tmp_path / "t.json"),
        "--count", "6", "--seed", "7",
    ])
    assert result.exit_code == 0, result.output
    manifest = json.loads((tmp_path / "t.json").read_text())
    assert manifest["schema"] == "targets/v1"
    assert len(manifest["targets"]) == 6

    result = runner.invoke(main, [
        "fixtures", "declgraph", "--out", str(tmp_path / "fx"),
    ])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "fx" / "riemann_cone.json").exists()
    assert len(list((tmp_path / "fx" / "tags").glob("*.json"))) >= 30


def test_init_simulate_report_graph_cycle(runner, tmp_path):
    targets = tmp_path / "targets.json"
    runner.invoke(main, ["fixtures", "targets", "--out", str(targets),
                         "--count", "4", "--seed", "7"])
    run_dir = tmp_path / "run1"
    result = runner.invoke(main, [
        "init", "--targets", str(targets), "--dir", str(run_dir), "--seed", "42",
    ])
    assert result.exit_code == 0, result.output
    assert (run_dir / "config" / "run.json").exists()
    assert (run_dir / "config" / "roles" / "worker" / "prompt.md").exists()
    assert (run_dir / "config" / "rubrics" / "faithfulness.md").exists()

    result = runner.invoke(main, [
        "simulate", "--config", str(run_dir / "config" / "run.json"),
    ])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output[result.output.index("{"):])
    assert payload["goals"]["counts"]["completed"] == 4
    assert payload["linear_history"] is True

    result = runner.invoke(main, ["report", "--dir", str(run_dir), "--cost"])
    assert result.exit_code == 0
    assert "Token multipliers" in result.output and "1.25x" in result.output

    result = runner.invoke(main, ["report", "--dir", str(run_dir), "--curve"])
    assert result.exit_code == 0
    assert "effective_tokens" in result.output

    result = runner.invoke(main, ["graph", "--dir", str(run_dir),
                                  "--format", "dot"])
    assert result.exit_code == 0
    assert result.output.startswith("digraph tasks {")
    assert '"t-0001"' in result.output

    result = runner.invoke(main, ["graph", "--dir", str(run_dir),
                                  "--format", "json"])
    view = json.loads(result.output)
    assert len(view["nodes"]) >= 4


def test_eval_command_standalone(runner, tmp_path):
    targets = tmp_path / "targets.json"
    manifest = {
        "schema": "targets/v1",
        "book": {"title": "mini", "source_ref": ""},
        "targets": [
            {"id": "T01", "book_location": {"section": "1", "label": "Theorem 1"},
             "statement_text": "first", "has_source_proof": True, "notes": ""},
            {"id": "T02", "book_location": {"section": "1", "label": "Theorem 2"},
             "statement_text": "second", "has_source_proof": True, "notes": ""},
        ],
    }
    targets.write_text(json.dumps(manifest))
    workspace = tmp_path / "ws"
    workspace.mkdir()
    (workspace / "T01.fml").write_text("theorem decl_T01 := proof\n")
    # T02 deliberately missing.
    out = tmp_path / "verdicts.json"
    result = runner.invoke(main, [
        "eval", "--workspace", str(workspace), "--targets", str(targets),
        "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    assert "passed 1/2 targets" in result.output
    payload = json.loads(out.read_text())
    byid = {v["target_id"]: v for v in payload["verdicts"]}
    assert byid["T01"]["passed"] is True
    assert byid["T02"]["match"]["confidence"] == "not_found"


def test_simulate_ablation_flags(runner, tmp_path):
    targets = tmp_path / "targets.json"
    runner.invoke(main, ["fixtures", "targets", "--out", str(targets),
                         "--count", "3", "--seed", "7"])
    result = runner.invoke(main, [
        "simulate", "--targets", str(targets),
        "--dir", str(tmp_path / "sim"), "--seed", "11",
        "--disable-trace-analyzer",
    ])
    assert result.exit_code == 0, result.output
    assert not list((tmp_path / "sim" / "skills").rglob("guide.md"))
