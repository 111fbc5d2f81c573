"""Three-stage evaluation harness.

Stage 1 are mechanical gates: the workspace must verify green and its
source files must not contain the metaprogramming keywords (`elab`,
`syntax`) as code tokens — occurrences inside comments or strings are fine
(see `lexical`). Stage 2 matches each target statement to a declaration via
a matcher agent. Stage 3 grades each matched target with three independent
judges, one per rubric (faithfulness, proof integrity, code quality) on a
0..5 integer scale; a target passes only if the gates pass, a declaration
was found, every rubric scores at least 3, and the axiom-purity check (with
inherited-failure filtering across the evaluated set) passes. A separate
1..5 containment estimate of how much required infrastructure the base
library already provides can be collected per target for reporting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable

from .agents.protocol import MalformedPayload
from .agents.runtime import AgentSession, request_json_payload
from .depgraph import DepGraph, DeclKind, PurityVerdict
from .lexical import find_forbidden_tokens
from .toylang import SOURCE_SUFFIXES
from .verifiers import BuildVerifier

FORBIDDEN_KEYWORDS = {"elab", "syntax"}
RUBRIC_PASS_THRESHOLD = 3
TARGETS_SCHEMA = "targets/v1"


class EvaluationError(Exception):
    pass


class ManifestError(EvaluationError):
    pass


@dataclass(frozen=True)
class TargetStatement:
    id: str
    section: str
    label: str
    statement_text: str
    has_source_proof: bool = True
    notes: str = ""

    def to_payload(self) -> dict:
        return {
            "id": self.id,
            "book_location": {"section": self.section, "label": self.label},
            "statement_text": self.statement_text,
            "has_source_proof": self.has_source_proof,
            "notes": self.notes,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "TargetStatement":
        location = payload.get("book_location", {})
        return cls(
            id=payload["id"],
            section=location.get("section", ""),
            label=location.get("label", ""),
            statement_text=payload["statement_text"],
            has_source_proof=bool(payload.get("has_source_proof", True)),
            notes=payload.get("notes", ""),
        )


@dataclass(frozen=True)
class TargetsManifest:
    book_title: str
    source_ref: str
    targets: tuple[TargetStatement, ...]

    def to_payload(self) -> dict:
        return {
            "schema": TARGETS_SCHEMA,
            "book": {"title": self.book_title, "source_ref": self.source_ref},
            "targets": [t.to_payload() for t in self.targets],
        }


def load_targets_manifest(path: Path) -> TargetsManifest:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid JSON in targets manifest: {exc.msg}") from exc
    if document.get("schema") != TARGETS_SCHEMA:
        raise ManifestError(f"targets manifest must declare schema {TARGETS_SCHEMA!r}")
    book = document.get("book", {})
    targets = tuple(
        TargetStatement.from_payload(item) for item in document.get("targets", [])
    )
    seen: set[str] = set()
    for target in targets:
        if target.id in seen:
            raise ManifestError(f"duplicate target id {target.id!r}")
        seen.add(target.id)
    return TargetsManifest(
        book_title=book.get("title", ""),
        source_ref=book.get("source_ref", ""),
        targets=targets,
    )


class MatchConfidence(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"
    NOT_FOUND = "not_found"


@dataclass(frozen=True)
class MatchResult:
    target_id: str
    declaration_name: str | None
    file: str | None
    confidence: MatchConfidence
    reasoning: str = ""

    def to_payload(self) -> dict:
        return {
            "target_id": self.target_id,
            "declaration_name": self.declaration_name,
            "file": self.file,
            "confidence": self.confidence.value,
            "reasoning": self.reasoning,
        }


class Rubric(str, Enum):
    FAITHFULNESS = "faithfulness"
    PROOF_INTEGRITY = "proof_integrity"
    CODE_QUALITY = "code_quality"


@dataclass(frozen=True)
class RubricScore:
    rubric: Rubric
    score: int
    reasoning: str = ""

    def __post_init__(self) -> None:
        if not 0 <= self.score <= 5:
            raise ValueError("rubric scores are integers in 0..5")

    def to_payload(self) -> dict:
        return {
            "rubric": self.rubric.value,
            "score": self.score,
            "reasoning": self.reasoning,
        }


@dataclass(frozen=True)
class GateResult:
    passed: bool
    reasons: tuple[str, ...] = ()


@dataclass
class TargetVerdict:
    target_id: str
    gate_pass: bool
    match: MatchResult
    scores: tuple[RubricScore, ...]
    purity: PurityVerdict
    passed: bool
    failure_reasons: list[str] = field(default_factory=list)
    containment: int | None = None

    def to_payload(self) -> dict:
        return {
            "target_id": self.target_id,
            "gate_pass": self.gate_pass,
            "match": self.match.to_payload(),
            "scores": [s.to_payload() for s in self.scores],
            "purity": self.purity.to_payload(),
            "passed": self.passed,
            "failure_reasons": list(self.failure_reasons),
            "containment": self.containment,
        }


def mechanical_gates(
    workspace: Path,
    verifier: BuildVerifier,
    source_suffixes: tuple[str, ...] = SOURCE_SUFFIXES,
) -> GateResult:
    """Build verification plus the forbidden-keyword token scan."""
    workspace = Path(workspace)
    reasons: list[str] = []
    verdict = verifier.verify(workspace)
    if not verdict.passed:
        reasons.extend(
            f"build: {d.file}:{d.line}: {d.message}" for d in verdict.diagnostics[:20]
        )
    for suffix in source_suffixes:
        for path in sorted(workspace.rglob(f"*{suffix}")):
            if ".git" in path.parts or path.is_symlink():
                continue
            rel = path.relative_to(workspace)
            hits = find_forbidden_tokens(
                path.read_text(encoding="utf-8", errors="replace"), FORBIDDEN_KEYWORDS
            )
            reasons.extend(
                f"forbidden keyword {t.text!r} at {rel}:{t.line}" for t in hits
            )
    return GateResult(passed=not reasons, reasons=tuple(reasons))


def aggregate_verdict(
    target: TargetStatement,
    gate: GateResult,
    match: MatchResult,
    scores: tuple[RubricScore, ...],
    purity: PurityVerdict,
    containment: int | None = None,
) -> TargetVerdict:
    """Fold the stages into one pass/fail verdict with every violated
    condition listed."""
    reasons: list[str] = []
    if not gate.passed:
        reasons.extend(f"gate: {r}" for r in gate.reasons[:5])
    if match.confidence is MatchConfidence.NOT_FOUND:
        reasons.append("no matching declaration found")
    expected = {Rubric.FAITHFULNESS, Rubric.PROOF_INTEGRITY, Rubric.CODE_QUALITY}
    if match.confidence is not MatchConfidence.NOT_FOUND:
        present = {s.rubric for s in scores}
        for missing in sorted(expected - present, key=lambda r: r.value):
            reasons.append(f"{missing.value}: judge_unavailable")
        for score in scores:
            if score.score < RUBRIC_PASS_THRESHOLD:
                reasons.append(
                    f"{score.rubric.value} {score.score} < {RUBRIC_PASS_THRESHOLD}"
                )
    if not purity.passed:
        for axiom, chain in purity.offending:
            reasons.append(f"purity: axiom {axiom} via {' -> '.join(chain)}")
    return TargetVerdict(
        target_id=target.id,
        gate_pass=gate.passed,
        match=match,
        scores=scores,
        purity=purity,
        passed=not reasons,
        failure_reasons=reasons,
        containment=containment,
    )


def rubric_text(name: str, config_dir: Path | None = None) -> str:
    """Rubric criteria shipped as editable config data."""
    if config_dir is not None:
        override = Path(config_dir) / "rubrics" / f"{name}.md"
        if override.exists():
            return override.read_text(encoding="utf-8")
    try:
        return (
            resources.files("formforge")
            .joinpath(f"roledata/judge/rubric_{name}.md")
            .read_text(encoding="utf-8")
        )
    except FileNotFoundError:
        return f"Score the formalization on the {name} rubric from 0 to 5."


AgentFactory = Callable[..., AgentSession]


@dataclass
class EvaluationReport:
    eval_id: str
    verdicts: list[TargetVerdict]
    gate: GateResult

    @property
    def passed_count(self) -> int:
        return sum(1 for v in self.verdicts if v.passed)

    def to_payload(self) -> dict:
        return {
            "eval_id": self.eval_id,
            "gate": {"passed": self.gate.passed, "reasons": list(self.gate.reasons)},
            "passed_count": self.passed_count,
            "verdicts": [v.to_payload() for v in self.verdicts],
        }


class EvaluationHarness:
    """Runs the three stages over a workspace tree.

    `agent_factory(role, meta=..., sandbox_root=..., extra_services=...)`
    builds a ready-to-run AgentSession; the driver wires it to real or
    scripted backends.
    """

    def __init__(
        self,
        verifier: BuildVerifier,
        agent_factory: AgentFactory,
        legitimate_axioms: frozenset[str] = frozenset(),
        config_dir: Path | None = None,
        collect_containment: bool = False,
        max_parallel: int = 1,
    ) -> None:
        self.verifier = verifier
        self.agent_factory = agent_factory
        self.legitimate_axioms = legitimate_axioms
        self.config_dir = config_dir
        self.collect_containment = collect_containment
        # Per-target matching and grading fan out up to this wide; the
        # driver's resource pool still caps concurrent model calls globally.
        self.max_parallel = max_parallel

    # -- stage 2: matching ---------------------------------------------------

    def match_target(
        self, target: TargetStatement, workspace: Path
    ) -> MatchResult:
        session = self.agent_factory(
            "matcher",
            sandbox_root=workspace,
            meta={"target_id": target.id},
        )
        prompt = (
            "Find the declaration that formalizes this statement. Search the "
            "source tree, then answer with a JSON object with fields "
            '"declaration" (string or null), "file" (string or null), '
            '"confidence" ("high", "medium", "low", or "not_found") and '
            '"reasoning". For multi-part statements pick the strongest single '
            "declaration and note the related ones in the reasoning.\n\n"
            f"Location: {target.section} {target.label}\n"
            f"Statement: {target.statement_text}"
        )
        try:
            payload = request_json_payload(
                session,
                prompt,
                required={"confidence": str},
                enums={"confidence": {c.value for c in MatchConfidence}},
            )
        except MalformedPayload as exc:
            return MatchResult(
                target_id=target.id,
                declaration_name=None,
                file=None,
                confidence=MatchConfidence.NOT_FOUND,
                reasoning=f"matcher failed: {exc}",
            )
        confidence = MatchConfidence(payload["confidence"])
        declaration = payload.get("declaration")
        if confidence is MatchConfidence.NOT_FOUND:
            declaration = None
        return MatchResult(
            target_id=target.id,
            declaration_name=declaration,
            file=payload.get("file"),
            confidence=confidence,
            reasoning=str(payload.get("reasoning", "")),
        )

    # -- stage 3: grading ------------------------------------------------------

    def grade_target(
        self,
        target: TargetStatement,
        match: MatchResult,
        workspace: Path,
        graph: DepGraph,
    ) -> tuple[RubricScore, ...]:
        scores: list[RubricScore] = []
        for rubric in Rubric:
            session = self.agent_factory(
                "judge",
                sandbox_root=workspace,
                meta={"target_id": target.id, "rubric": rubric.value},
                extra_services={"depgraph": graph},
            )
            criteria = rubric_text(rubric.value, self.config_dir)
            prompt = (
                f"Grade the formalization of the statement below on the "
                f"{rubric.value} rubric. The dependency graph is available "
                "through your query tools. Answer with a JSON object "
                '{"score": <integer 0..5>, "reasoning": "..."}.\n\n'
                f"Rubric criteria:\n{criteria}\n\n"
                f"Statement ({target.section} {target.label}): "
                f"{target.statement_text}\n"
                f"Matched declaration: {match.declaration_name} "
                f"(file {match.file}, confidence {match.confidence.value})"
            )
            try:
                payload = request_json_payload(
                    session, prompt, required={"score": int, "reasoning": str}
                )
                score = int(payload["score"])
                if not 0 <= score <= 5:
                    raise MalformedPayload(f"score {score} out of range")
            except MalformedPayload:
                continue  # missing rubric surfaces as judge_unavailable
            scores.append(
                RubricScore(
                    rubric=rubric, score=score, reasoning=str(payload["reasoning"])
                )
            )
        return tuple(scores)

    def containment_score(
        self, target: TargetStatement, workspace: Path
    ) -> int | None:
        session = self.agent_factory(
            "judge",
            sandbox_root=workspace,
            meta={"target_id": target.id, "rubric": "containment"},
        )
        criteria = rubric_text("containment", self.config_dir)
        prompt = (
            "Estimate how much of the infrastructure this statement needs "
            "already exists in the base library, from 5 (fully contained: the "
            "statement itself is already there) down to 1 (not contained). "
            'Answer with JSON {"score": <1..5>, "reasoning": "..."}.\n\n'
            f"Criteria:\n{criteria}\n\nStatement: {target.statement_text}"
        )
        try:
            payload = request_json_payload(session, prompt, required={"score": int})
            score = int(payload["score"])
            return score if 1 <= score <= 5 else None
        except MalformedPayload:
            return None

    # -- purity ------------------------------------------------------------------

    def _legitimate_axioms_for(
        self,
        targets: list[TargetStatement],
        matches: dict[str, MatchResult],
        graph: DepGraph,
        all_targets: list[TargetStatement] | None = None,
        known_matches: dict[str, str] | None = None,
    ) -> frozenset[str]:
        """Axioms standing in for statements the source never proves.

        Axiomatization legitimacy is a property of the manifest, not of the
        evaluated subset: a proof-less target axiomatized in an earlier
        merge stays legitimate when later evaluations only cover its
        dependents, so the caller may pass the full target list plus
        previously recorded matches.
        """
        allowed = set(self.legitimate_axioms)
        known_matches = known_matches or {}
        current = {
            tid: m.declaration_name
            for tid, m in matches.items()
            if m.declaration_name is not None
        }
        for target in all_targets or targets:
            if target.has_source_proof:
                continue
            decl_name = current.get(target.id) or known_matches.get(target.id)
            if decl_name is None:
                continue
            decl = graph.declarations.get(decl_name)
            if decl is not None and decl.kind is DeclKind.AXIOM:
                allowed.add(decl.name)
        return frozenset(allowed)

    # -- the full pipeline ---------------------------------------------------------

    def evaluate_targets(
        self,
        targets: list[TargetStatement],
        workspace: Path,
        graph: DepGraph,
        eval_id: str = "eval",
        all_targets: list[TargetStatement] | None = None,
        known_matches: dict[str, str] | None = None,
    ) -> EvaluationReport:
        workspace = Path(workspace)
        gate = mechanical_gates(workspace, self.verifier)
        if not gate.passed:
            verdicts = [
                aggregate_verdict(
                    target,
                    gate,
                    MatchResult(
                        target_id=target.id,
                        declaration_name=None,
                        file=None,
                        confidence=MatchConfidence.NOT_FOUND,
                        reasoning="not matched: mechanical gates failed",
                    ),
                    (),
                    PurityVerdict(passed=True),
                )
                for target in targets
            ]
            return EvaluationReport(eval_id=eval_id, verdicts=verdicts, gate=gate)

        matches = dict(
            zip(
                (t.id for t in targets),
                self._map_targets(lambda t: self.match_target(t, workspace), targets),
            )
        )
        legitimate = self._legitimate_axioms_for(
            targets, matches, graph,
            all_targets=all_targets, known_matches=known_matches,
        )

        raw_purity: dict[str, PurityVerdict] = {}
        decl_by_target: dict[str, str] = {}
        for target in targets:
            match = matches[target.id]
            name = match.declaration_name
            if name is not None and name in graph.declarations:
                decl_by_target[target.id] = name
                raw_purity[target.id] = graph.axiom_purity(name, legitimate)
            else:
                raw_purity[target.id] = PurityVerdict(passed=True)
        filtered = graph.inherited_failure_filter(decl_by_target, raw_purity)

        def grade_one(target: TargetStatement) -> TargetVerdict:
            match = matches[target.id]
            scores: tuple[RubricScore, ...] = ()
            containment: int | None = None
            if match.confidence is not MatchConfidence.NOT_FOUND:
                scores = self.grade_target(target, match, workspace, graph)
                if self.collect_containment:
                    containment = self.containment_score(target, workspace)
            return aggregate_verdict(
                target, gate, match, scores, filtered[target.id],
                containment=containment,
            )

        verdicts = self._map_targets(grade_one, targets)
        return EvaluationReport(eval_id=eval_id, verdicts=verdicts, gate=gate)

    def _map_targets(self, fn, targets: list[TargetStatement]) -> list:
        """Apply fn per target, concurrently when configured; results keep
        target order either way."""
        if self.max_parallel <= 1 or len(targets) <= 1:
            return [fn(t) for t in targets]
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=self.max_parallel) as pool:
            return list(pool.map(fn, targets))


def write_verdicts(report: EvaluationReport, state_dir: Path) -> Path:
    out_dir = Path(state_dir) / "verdicts"
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{report.eval_id}.json"
    path.write_text(json.dumps(report.to_payload(), indent=2) + "\n", encoding="utf-8")
    return path
