from __future__ import annotations

import itertools
import json

import pytest

from formforge.depgraph import DepGraph, PurityVerdict
from formforge.evaluation import (
    EvaluationHarness,
    GateResult,
    ManifestError,
    MatchConfidence,
    MatchResult,
    Rubric,
    RubricScore,
    TargetStatement,
    aggregate_verdict,
    load_targets_manifest,
    mechanical_gates,
)
from formforge.toylang import export_declarations
from formforge.verifiers import ToyVerifier

TARGET = TargetStatement(id="T01", section="1.1", label="Theorem 1",
                         statement_text="a closure property")


def match(confidence=MatchConfidence.HIGH, name="decl_T01"):
    return MatchResult(
        target_id="T01",
        declaration_name=name if confidence is not MatchConfidence.NOT_FOUND else None,
        file="src/T01.fml",
        confidence=confidence,
    )


def scores(f=5, p=5, q=5):
    return (
        RubricScore(Rubric.FAITHFULNESS, f),
        RubricScore(Rubric.PROOF_INTEGRITY, p),
        RubricScore(Rubric.CODE_QUALITY, q),
    )


PASS_GATE = GateResult(passed=True)
PASS_PURITY = PurityVerdict(passed=True)


class TestManifest:
    def test_load_and_shape(self, tmp_path):
        doc = {
            "schema": "targets/v1",
            "book": {"title": "Test Book", "source_ref": "url"},
            "targets": [TARGET.to_payload()],
        }
        path = tmp_path / "targets.json"
        path.write_text(json.dumps(doc))
        manifest = load_targets_manifest(path)
        assert manifest.book_title == "Test Book"
        assert manifest.targets[0] == TARGET

    def test_duplicate_ids_rejected(self, tmp_path):
        doc = {
            "schema": "targets/v1", "book": {},
            "targets": [TARGET.to_payload(), TARGET.to_payload()],
        }
        path = tmp_path / "targets.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestError):
            load_targets_manifest(path)

    def test_wrong_schema_rejected(self, tmp_path):
        path = tmp_path / "targets.json"
        path.write_text('{"schema": "targets/v2", "targets": []}')
        with pytest.raises(ManifestError):
            load_targets_manifest(path)


class TestMechanicalGates:
    def test_green_build_clean_sources(self, tmp_path):
        (tmp_path / "a.fml").write_text("def a := proof\n")
        assert mechanical_gates(tmp_path, ToyVerifier()).passed

    def test_red_build_fails_with_reason(self, tmp_path):
        (tmp_path / "a.fml").write_text("#fail nope\n")
        result = mechanical_gates(tmp_path, ToyVerifier())
        assert not result.passed
        assert any("build:" in r for r in result.reasons)

    def test_top_level_forbidden_token_names_file_and_line(self, tmp_path):
        (tmp_path / "a.fml").write_text("def a := proof\n")
        (tmp_path / "bad.lean").write_text("-- fine\nelab widget\n")
        result = mechanical_gates(tmp_path, ToyVerifier())
        assert not result.passed
        assert any("'elab'" in r and "bad.lean:2" in r for r in result.reasons)

    def test_keyword_only_in_comment_passes(self, tmp_path):
        (tmp_path / "a.fml").write_text(
            "-- elab would be forbidden here\n/- syntax too -/\ndef a := proof\n"
        )
        assert mechanical_gates(tmp_path, ToyVerifier()).passed

    def test_keyword_in_identifier_passes(self, tmp_path):
        (tmp_path / "a.fml").write_text("def syntaxTree := proof\n")
        assert mechanical_gates(tmp_path, ToyVerifier()).passed


class TestAggregateVerdict:
    def test_passing_triple(self):
        verdict = aggregate_verdict(TARGET, PASS_GATE, match(), scores(5, 4, 3),
                                    PASS_PURITY)
        assert verdict.passed and verdict.failure_reasons == []

    def test_single_low_rubric_fails_with_named_reason(self):
        verdict = aggregate_verdict(TARGET, PASS_GATE, match(), scores(3, 3, 2),
                                    PASS_PURITY)
        assert not verdict.passed
        assert "code_quality 2 < 3" in verdict.failure_reasons

    def test_not_found_fails(self):
        verdict = aggregate_verdict(
            TARGET, PASS_GATE, match(MatchConfidence.NOT_FOUND), (), PASS_PURITY
        )
        assert not verdict.passed
        assert "no matching declaration found" in verdict.failure_reasons

    def test_purity_failure_lists_chain(self):
        purity = PurityVerdict(
            passed=False, offending=(("#sorry", ("decl_T01", "helper")),)
        )
        verdict = aggregate_verdict(TARGET, PASS_GATE, match(), scores(), purity)
        assert not verdict.passed
        assert any("#sorry" in r and "decl_T01 -> helper" in r
                   for r in verdict.failure_reasons)

    def test_missing_judge_is_a_failure(self):
        verdict = aggregate_verdict(
            TARGET, PASS_GATE, match(), scores()[:2], PASS_PURITY
        )
        assert not verdict.passed
        assert "code_quality: judge_unavailable" in verdict.failure_reasons

    def test_exhaustive_216_triples(self):
        for f, p, q in itertools.product(range(6), repeat=3):
            verdict = aggregate_verdict(
                TARGET, PASS_GATE, match(), scores(f, p, q), PASS_PURITY
            )
            assert verdict.passed == (min(f, p, q) >= 3), (f, p, q)

    def test_low_confidence_still_grades_but_records_it(self):
        verdict = aggregate_verdict(
            TARGET, PASS_GATE, match(MatchConfidence.LOW), scores(), PASS_PURITY
        )
        assert verdict.passed  # confidence gates nothing except not_found
        assert verdict.match.confidence is MatchConfidence.LOW


def build_workspace(tmp_path, content: dict[str, str]):
    workspace = tmp_path / "ws"
    workspace.mkdir()
    for name, text in content.items():
        path = workspace / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return workspace


def targets(*ids, no_proof=()):
    return [
        TargetStatement(
            id=i, section="1.1", label=i, statement_text=f"statement {i}",
            has_source_proof=i not in no_proof,
        )
        for i in ids
    ]


class TestHarness:
    def _harness(self, factory, **kwargs):
        return EvaluationHarness(ToyVerifier(), factory, **kwargs)

    def test_full_pipeline_passes_clean_workspace(self, tmp_path, scripted_factory):
        workspace = build_workspace(
            tmp_path, {"src/T01.fml": "theorem decl_T01 := proof\n"}
        )
        graph = DepGraph.from_document(export_declarations(workspace))
        harness = self._harness(scripted_factory)
        report = harness.evaluate_targets(targets("T01"), workspace, graph, "eval-1")
        assert report.passed_count == 1
        verdict = report.verdicts[0]
        assert verdict.match.declaration_name == "decl_T01"
        assert len(verdict.scores) == 3
        assert all(s.score >= 3 for s in verdict.scores)

    def test_missing_declaration_is_not_found(self, tmp_path, scripted_factory):
        workspace = build_workspace(tmp_path, {"src/other.fml": "def x := proof\n"})
        graph = DepGraph.from_document(export_declarations(workspace))
        harness = self._harness(scripted_factory)
        report = harness.evaluate_targets(targets("T01"), workspace, graph, "eval-2")
        assert report.passed_count == 0
        assert report.verdicts[0].match.confidence is MatchConfidence.NOT_FOUND

    def test_gate_failure_short_circuits(self, tmp_path, scripted_factory):
        workspace = build_workspace(tmp_path, {"src/T01.fml": "#fail broken\n"})
        graph = DepGraph.from_document(export_declarations(workspace),
                                       permissive=True)
        harness = self._harness(scripted_factory)
        report = harness.evaluate_targets(targets("T01"), workspace, graph, "eval-3")
        assert not report.gate.passed
        assert report.passed_count == 0
        assert report.verdicts[0].scores == ()

    def test_sorry_chain_with_inherited_filter_across_target_set(
        self, tmp_path, scripted_factory
    ):
        workspace = build_workspace(tmp_path, {
            "src/T01.fml": "theorem decl_T01 := sorry\n",
            "src/T02.fml": "theorem decl_T02 uses decl_T01 := proof\n",
        })
        graph = DepGraph.from_document(export_declarations(workspace))
        harness = self._harness(scripted_factory)
        report = harness.evaluate_targets(
            targets("T01", "T02"), workspace, graph, "eval-4"
        )
        by_id = {v.target_id: v for v in report.verdicts}
        assert not by_id["T01"].passed  # owns the placeholder
        assert by_id["T02"].purity.passed  # inherited failure filtered

    def test_axiomatized_target_without_source_proof_passes(
        self, tmp_path, scripted_factory
    ):
        workspace = build_workspace(tmp_path, {
            "src/T01.fml": "axiom decl_T01\n",
            "src/T02.fml": "theorem decl_T02 uses decl_T01 := proof\n",
        })
        graph = DepGraph.from_document(export_declarations(workspace))
        harness = self._harness(scripted_factory)
        report = harness.evaluate_targets(
            targets("T01", "T02", no_proof=("T01",)), workspace, graph, "eval-5"
        )
        by_id = {v.target_id: v for v in report.verdicts}
        assert by_id["T01"].purity.passed
        assert by_id["T02"].purity.passed

    def test_rerun_on_unchanged_workspace_is_idempotent(
        self, tmp_path, scripted_factory
    ):
        workspace = build_workspace(
            tmp_path, {"src/T01.fml": "theorem decl_T01 := proof\n"}
        )
        graph = DepGraph.from_document(export_declarations(workspace))
        harness = self._harness(scripted_factory)
        first = harness.evaluate_targets(targets("T01"), workspace, graph, "e1")
        second = harness.evaluate_targets(targets("T01"), workspace, graph, "e1")
        assert [v.to_payload() for v in first.verdicts] == [
            v.to_payload() for v in second.verdicts
        ]

    def test_parallel_fanout_matches_sequential_results(
        self, tmp_path, scripted_factory
    ):
        workspace = build_workspace(tmp_path, {
            f"src/T{i:02d}.fml": f"theorem decl_T{i:02d} := proof\n"
            for i in range(1, 7)
        })
        graph = DepGraph.from_document(export_declarations(workspace))
        batch = targets(*[f"T{i:02d}" for i in range(1, 7)])
        sequential = self._harness(scripted_factory).evaluate_targets(
            batch, workspace, graph, "e-seq"
        )
        parallel = self._harness(scripted_factory, max_parallel=4).evaluate_targets(
            batch, workspace, graph, "e-par"
        )
        assert [v.target_id for v in parallel.verdicts] == [
            v.target_id for v in sequential.verdicts
        ]
        assert [v.passed for v in parallel.verdicts] == [
            v.passed for v in sequential.verdicts
        ]

    def test_containment_collected_when_enabled(self, tmp_path, scripted_factory):
        workspace = build_workspace(
            tmp_path, {"src/T01.fml": "theorem decl_T01 := proof\n"}
        )
        graph = DepGraph.from_document(export_declarations(workspace))
        harness = self._harness(scripted_factory, collect_containment=True)
        report = harness.evaluate_targets(targets("T01"), workspace, graph, "e2")
        assert report.verdicts[0].containment in range(1, 6)
