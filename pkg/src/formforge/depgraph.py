"""Declaration dependency graph: structural tags, alerts, and axiom purity.

The graph is loaded from a `declgraph/v1` export produced by a toolchain
exporter. Each declaration carries its kind, the project-local declarations
it references, the axioms its proof ultimately uses (with `#sorry` as the
canonical placeholder axiom), and a pre-extracted summary of its proof-term
shape. From those the harness computes:

  * ten structural tags flagging proof-term patterns that may indicate a
    faithfulness defect (vacuous bodies, ignored parameters, assumption
    smuggling through instance arguments, orphan classes, ...);
  * alerts — tags found anywhere in a declaration's dependency cone,
    propagated upward with a shortest witness path;
  * axiom purity — whether the closed dependency cone stays inside an
    allow-list of legitimate axioms, with a shortest chain to any offender;
  * inherited-failure filtering — a purity failure is waived when every
    chain to the offending axiom passes through a declaration that is
    itself the matched target of another evaluated statement failing for
    the same axiom, attributing the failure to its upstream root cause.

The graph is immutable after load; every query is read-only.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

SCHEMA_NAME = "declgraph/v1"
SORRY_AXIOM = "#sorry"


class DepGraphError(Exception):
    pass


class SchemaViolation(DepGraphError):
    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


class DanglingReference(DepGraphError):
    def __init__(self, source: str, target: str) -> None:
        super().__init__(f"declaration {source} references undeclared name {target}")
        self.source = source
        self.target = target


class UnknownDeclaration(DepGraphError):
    def __init__(self, name: str) -> None:
        super().__init__(f"unknown declaration: {name}")


class DeclKind(str, Enum):
    THEOREM = "theorem"
    DEFINITION = "definition"
    AXIOM = "axiom"
    INSTANCE = "instance"
    CLASS = "class"
    STRUCTURE = "structure"
    OTHER = "other"


class BodyShape(str, Enum):
    VACUOUS_CONSTANT = "vacuous_constant"
    SINGLE_BOUND_VARIABLE = "single_bound_variable"
    FIELD_PROJECTION_OF_BOUND_VARIABLE = "field_projection_of_bound_variable"
    CONSTRUCTOR_APPLICATION = "constructor_application"
    EXFALSO_APPLICATION = "exfalso_application"
    SUBSINGLETON_ELIM_APPLICATION = "subsingleton_elim_application"
    OTHER = "other"


class StructuralTag(str, Enum):
    VACUOUS_BODY = "vacuous_body"
    IGNORES_PARAMS = "ignores_params"
    PROOF_BY_EXFALSO = "proof_by_exfalso"
    PROOF_BY_SUBSINGLETON = "proof_by_subsingleton"
    RETURNS_ASSUMPTION = "returns_assumption"
    FIELD_PROJECTION_BODY = "field_projection_body"
    CUSTOM_HYPOTHESIS_IN_TYPE = "custom_hypothesis_in_type"
    TRIVIAL_CONSTRUCTOR = "trivial_constructor"
    ORPHAN_CLASS = "orphan_class"
    TRIVIAL_INSTANCE = "trivial_instance"


@dataclass(frozen=True)
class ProofTermFeatures:
    """Pre-extracted proof-term evidence, one field family per tag rule."""

    body_shape: BodyShape = BodyShape.OTHER
    unused_binder_count: int = 0
    binders_total: int = 0
    constructor_args_reference_project: bool = False
    instance_implicit_project_classes: frozenset[str] = frozenset()
    projected_structure: str | None = None

    def __post_init__(self) -> None:
        if self.unused_binder_count > self.binders_total:
            raise ValueError("unused_binder_count exceeds binders_total")

    @classmethod
    def from_payload(cls, payload: dict, path: str) -> "ProofTermFeatures":
        try:
            return cls(
                body_shape=BodyShape(payload.get("body_shape", "other")),
                unused_binder_count=int(payload.get("unused_binder_count", 0)),
                binders_total=int(payload.get("binders_total", 0)),
                constructor_args_reference_project=bool(
                    payload.get("constructor_args_reference_project", False)
                ),
                instance_implicit_project_classes=frozenset(
                    payload.get("instance_implicit_project_classes", [])
                ),
                projected_structure=payload.get("projected_structure"),
            )
        except (ValueError, TypeError) as exc:
            raise SchemaViolation(path, str(exc)) from exc

    def to_payload(self) -> dict:
        return {
            "body_shape": self.body_shape.value,
            "unused_binder_count": self.unused_binder_count,
            "binders_total": self.binders_total,
            "constructor_args_reference_project": self.constructor_args_reference_project,
            "instance_implicit_project_classes": sorted(
                self.instance_implicit_project_classes
            ),
            "projected_structure": self.projected_structure,
        }


@dataclass(frozen=True)
class DeclarationRecord:
    name: str
    kind: DeclKind
    refs: frozenset[str] = frozenset()
    axioms_used: frozenset[str] = frozenset()
    features: ProofTermFeatures = field(default_factory=ProofTermFeatures)
    file: str = ""
    range: tuple[int, int] = (0, 0)
    is_project_local: bool = True
    instance_of: str | None = None

    @classmethod
    def from_payload(cls, payload: dict, path: str) -> "DeclarationRecord":
        for required in ("name", "kind"):
            if required not in payload:
                raise SchemaViolation(path, f"missing field {required!r}")
        try:
            kind = DeclKind(payload["kind"])
        except ValueError as exc:
            raise SchemaViolation(f"{path}.kind", str(exc)) from exc
        features = ProofTermFeatures.from_payload(
            payload.get("features", {}), f"{path}.features"
        )
        if kind is DeclKind.AXIOM and features != ProofTermFeatures():
            raise SchemaViolation(path, "axiom declarations carry no proof-term features")
        line_range = payload.get("range", [0, 0])
        return cls(
            name=payload["name"],
            kind=kind,
            refs=frozenset(payload.get("refs", [])),
            axioms_used=frozenset(payload.get("axioms_used", [])),
            features=features,
            file=payload.get("file", ""),
            range=(int(line_range[0]), int(line_range[1])),
            is_project_local=bool(payload.get("is_project_local", True)),
            instance_of=payload.get("instance_of"),
        )

    def to_payload(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "refs": sorted(self.refs),
            "axioms_used": sorted(self.axioms_used),
            "features": self.features.to_payload(),
            "file": self.file,
            "range": list(self.range),
            "is_project_local": self.is_project_local,
            "instance_of": self.instance_of,
        }


@dataclass(frozen=True)
class Alert:
    """A structural tag surfaced on a declaration from its dependency cone.

    The path starts at the alerted declaration, ends at the tag's origin,
    and follows direct references; it is one shortest such witness.
    """

    tag: StructuralTag
    origin: str
    path: tuple[str, ...]

    def to_payload(self) -> dict:
        return {"tag": self.tag.value, "origin": self.origin, "path": list(self.path)}


@dataclass(frozen=True)
class PurityVerdict:
    passed: bool
    offending: tuple[tuple[str, tuple[str, ...]], ...] = ()
    # each entry: (axiom name, shortest chain from the declaration to the
    # declaration introducing that axiom)

    def offending_axioms(self) -> set[str]:
        return {axiom for axiom, _chain in self.offending}

    def to_payload(self) -> dict:
        return {
            "passed": self.passed,
            "offending": [
                {"axiom": axiom, "chain": list(chain)} for axiom, chain in self.offending
            ],
        }


class DepGraph:
    """Immutable declaration dependency graph with analysis queries."""

    def __init__(
        self,
        declarations: list[DeclarationRecord],
        warnings: list[str] | None = None,
    ) -> None:
        self.declarations: dict[str, DeclarationRecord] = {
            d.name: d for d in declarations
        }
        self.warnings = warnings or []
        self._cone_cache: dict[str, frozenset[str]] = {}
        self._tag_cache: dict[str, frozenset[StructuralTag]] = {}
        self._instances_by_class: dict[str, list[str]] = {}
        for decl in declarations:
            if decl.kind is DeclKind.INSTANCE and decl.instance_of:
                self._instances_by_class.setdefault(decl.instance_of, []).append(decl.name)

    # -- loading ----------------------------------------------------------

    @classmethod
    def from_document(cls, document: dict, permissive: bool = False) -> "DepGraph":
        if not isinstance(document, dict):
            raise SchemaViolation("$", "document root must be an object")
        if document.get("schema") != SCHEMA_NAME:
            raise SchemaViolation("$.schema", f"expected {SCHEMA_NAME!r}")
        raw = document.get("declarations")
        if not isinstance(raw, list):
            raise SchemaViolation("$.declarations", "must be a list")
        declarations = [
            DeclarationRecord.from_payload(item, f"$.declarations[{i}]")
            for i, item in enumerate(raw)
        ]
        names = {d.name for d in declarations}
        seen: set[str] = set()
        for decl in declarations:
            if decl.name in seen:
                raise SchemaViolation("$.declarations", f"duplicate name {decl.name!r}")
            seen.add(decl.name)
        warnings: list[str] = []
        resolved: list[DeclarationRecord] = []
        for decl in declarations:
            dangling = sorted(decl.refs - names)
            if dangling and not permissive:
                raise DanglingReference(decl.name, dangling[0])
            if dangling:
                warnings.extend(
                    f"{decl.name}: external reference {t!r}" for t in dangling
                )
                decl = DeclarationRecord(
                    name=decl.name,
                    kind=decl.kind,
                    refs=decl.refs & names,
                    axioms_used=decl.axioms_used,
                    features=decl.features,
                    file=decl.file,
                    range=decl.range,
                    is_project_local=decl.is_project_local,
                    instance_of=decl.instance_of,
                )
            resolved.append(decl)
        return cls(resolved, warnings)

    @classmethod
    def load_export(cls, path: Path, permissive: bool = False) -> "DepGraph":
        try:
            document = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaViolation("$", f"invalid JSON: {exc.msg}") from exc
        return cls.from_document(document, permissive=permissive)

    def to_document(self) -> dict:
        return {
            "schema": SCHEMA_NAME,
            "declarations": [
                d.to_payload() for d in sorted(self.declarations.values(), key=lambda d: d.name)
            ],
        }

    # -- core queries -----------------------------------------------------

    def get(self, name: str) -> DeclarationRecord:
        decl = self.declarations.get(name)
        if decl is None:
            raise UnknownDeclaration(name)
        return decl

    def dependency_cone(self, name: str) -> frozenset[str]:
        """Transitive closure of references from `name`, excluding itself."""
        cached = self._cone_cache.get(name)
        if cached is not None:
            return cached
        start = self.get(name)
        seen: set[str] = set()
        frontier = deque(start.refs)
        while frontier:
            current = frontier.popleft()
            if current in seen:
                continue
            seen.add(current)
            decl = self.declarations.get(current)
            if decl is not None:
                frontier.extend(decl.refs - seen)
        seen.discard(name)
        cone = frozenset(seen)
        self._cone_cache[name] = cone
        return cone

    def _shortest_path(self, source: str, target: str) -> tuple[str, ...] | None:
        """BFS over reference edges from source to target (inclusive path)."""
        if source == target:
            return (source,)
        parents: dict[str, str] = {}
        frontier = deque([source])
        visited = {source}
        while frontier:
            current = frontier.popleft()
            decl = self.declarations.get(current)
            if decl is None:
                continue
            for nxt in sorted(decl.refs):
                if nxt in visited:
                    continue
                parents[nxt] = current
                if nxt == target:
                    path = [target]
                    while path[-1] != source:
                        path.append(parents[path[-1]])
                    path.reverse()
                    return tuple(path)
                visited.add(nxt)
                frontier.append(nxt)
        return None

    # -- structural tags --------------------------------------------------

    def compute_tags(self, name: str) -> frozenset[StructuralTag]:
        cached = self._tag_cache.get(name)
        if cached is not None:
            return cached
        decl = self.get(name)
        f = decl.features
        tags: set[StructuralTag] = set()
        if decl.kind is not DeclKind.AXIOM:
            if f.body_shape is BodyShape.VACUOUS_CONSTANT:
                tags.add(StructuralTag.VACUOUS_BODY)
            if f.unused_binder_count >= 1:
                tags.add(StructuralTag.IGNORES_PARAMS)
            if f.body_shape is BodyShape.EXFALSO_APPLICATION:
                tags.add(StructuralTag.PROOF_BY_EXFALSO)
            if f.body_shape is BodyShape.SUBSINGLETON_ELIM_APPLICATION:
                tags.add(StructuralTag.PROOF_BY_SUBSINGLETON)
            if f.body_shape is BodyShape.SINGLE_BOUND_VARIABLE:
                tags.add(StructuralTag.RETURNS_ASSUMPTION)
            if f.body_shape is BodyShape.FIELD_PROJECTION_OF_BOUND_VARIABLE:
                tags.add(StructuralTag.FIELD_PROJECTION_BODY)
            if f.instance_implicit_project_classes:
                tags.add(StructuralTag.CUSTOM_HYPOTHESIS_IN_TYPE)
            if (
                f.body_shape is BodyShape.CONSTRUCTOR_APPLICATION
                and not f.constructor_args_reference_project
            ):
                tags.add(StructuralTag.TRIVIAL_CONSTRUCTOR)
        if decl.kind is DeclKind.CLASS and not self._instances_by_class.get(name):
            tags.add(StructuralTag.ORPHAN_CLASS)
        if decl.kind is DeclKind.INSTANCE and (
            StructuralTag.VACUOUS_BODY in tags or StructuralTag.IGNORES_PARAMS in tags
        ):
            tags.add(StructuralTag.TRIVIAL_INSTANCE)
        result = frozenset(tags)
        self._tag_cache[name] = result
        return result

    def tagged_declarations(self) -> dict[str, frozenset[StructuralTag]]:
        return {
            name: tags
            for name in self.declarations
            if (tags := self.compute_tags(name))
        }

    # -- alert propagation --------------------------------------------------

    def propagate_alerts(self) -> dict[str, list[Alert]]:
        """Alerts for every declaration: tags of its closed dependency cone.

        Deduplicated by (tag, origin); each alert carries one shortest
        witness path from the alerted declaration to the origin.
        """
        tagged = self.tagged_declarations()
        alerts: dict[str, list[Alert]] = {}
        for name in self.declarations:
            scope = self.dependency_cone(name) | {name}
            found: list[Alert] = []
            for origin in sorted(scope):
                for tag in sorted(tagged.get(origin, ()), key=lambda t: t.value):
                    path = self._shortest_path(name, origin)
                    if path is None:
                        continue
                    found.append(Alert(tag=tag, origin=origin, path=path))
            if found:
                alerts[name] = found
        return alerts

    # -- axiom purity -------------------------------------------------------

    def axiom_purity(self, name: str, legitimate_axioms: frozenset[str]) -> PurityVerdict:
        """Check the closed cone of `name` against the axiom allow-list."""
        scope = self.dependency_cone(name) | {name}
        offending: list[tuple[str, tuple[str, ...]]] = []
        for member in sorted(scope):
            decl = self.declarations.get(member)
            if decl is None:
                continue
            for axiom in sorted(decl.axioms_used - legitimate_axioms):
                path = self._shortest_path(name, member)
                if path is not None:
                    offending.append((axiom, path))
        if not offending:
            return PurityVerdict(passed=True)
        # For each offending axiom keep one shortest chain.
        best: dict[str, tuple[str, ...]] = {}
        for axiom, chain in offending:
            if axiom not in best or len(chain) < len(best[axiom]):
                best[axiom] = chain
        return PurityVerdict(
            passed=False,
            offending=tuple(sorted(best.items())),
        )

    def _introducers(self, name: str, axiom: str) -> list[str]:
        scope = self.dependency_cone(name) | {name}
        return sorted(
            member
            for member in scope
            if axiom in self.declarations.get(member, _EMPTY_DECL).axioms_used
        )

    def _all_paths(self, source: str, target: str, limit: int = 10000) -> list[tuple[str, ...]]:
        """Every simple reference path from source to target (DAG walk)."""
        paths: list[tuple[str, ...]] = []
        stack: list[tuple[str, tuple[str, ...]]] = [(source, (source,))]
        while stack and len(paths) < limit:
            current, path = stack.pop()
            if current == target:
                paths.append(path)
                continue
            decl = self.declarations.get(current)
            if decl is None:
                continue
            for nxt in sorted(decl.refs, reverse=True):
                if nxt not in path:
                    stack.append((nxt, path + (nxt,)))
        return paths

    def inherited_failure_filter(
        self,
        matches: dict[str, str],
        verdicts: dict[str, PurityVerdict],
    ) -> dict[str, PurityVerdict]:
        """Attribute purity failures to their upstream root-cause targets.

        `matches` maps evaluated target ids to their matched declaration.
        A target's failure for an axiom is waived when every reference path
        from its declaration to every introducer of that axiom passes
        through (strictly after the start) a declaration matched to a
        different evaluated target whose raw verdict fails for the same
        axiom. A target whose declaration introduces the axiom directly is
        never waived. The filter never converts a pass into a fail.
        """
        failing_decls_by_axiom: dict[str, set[str]] = {}
        for target_id, verdict in verdicts.items():
            if verdict.passed:
                continue
            decl = matches.get(target_id)
            if decl is None:
                continue
            for axiom in verdict.offending_axioms():
                failing_decls_by_axiom.setdefault(axiom, set()).add(decl)

        adjusted: dict[str, PurityVerdict] = {}
        for target_id, verdict in verdicts.items():
            decl_name = matches.get(target_id)
            if verdict.passed or decl_name is None or decl_name not in self.declarations:
                adjusted[target_id] = verdict
                continue
            remaining: list[tuple[str, tuple[str, ...]]] = []
            for axiom, chain in verdict.offending:
                upstream = failing_decls_by_axiom.get(axiom, set()) - {decl_name}
                if not self._axiom_fully_mediated(decl_name, axiom, upstream):
                    remaining.append((axiom, chain))
            if remaining:
                adjusted[target_id] = PurityVerdict(passed=False, offending=tuple(remaining))
            else:
                adjusted[target_id] = PurityVerdict(passed=True)
        return adjusted

    def _axiom_fully_mediated(
        self, decl_name: str, axiom: str, upstream_decls: set[str]
    ) -> bool:
        """True iff every chain from decl_name to the axiom hits an upstream match."""
        introducers = self._introducers(decl_name, axiom)
        if decl_name in introducers:
            return False
        if not upstream_decls:
            return False
        for introducer in introducers:
            for path in self._all_paths(decl_name, introducer):
                if not any(step in upstream_decls for step in path[1:]):
                    return False
        return True

    # -- judge query views --------------------------------------------------

    def graph_health_summary(self) -> dict:
        tagged = self.tagged_declarations()
        sorry_count = sum(
            1 for d in self.declarations.values() if SORRY_AXIOM in d.axioms_used
        )
        kind_counts: dict[str, int] = {}
        for decl in self.declarations.values():
            kind_counts[decl.kind.value] = kind_counts.get(decl.kind.value, 0) + 1
        return {
            "declarations": len(self.declarations),
            "by_kind": kind_counts,
            "tagged_declarations": len(tagged),
            "tag_counts": _tag_counts(tagged),
            "declarations_with_sorry": sorry_count,
            "warnings": list(self.warnings),
        }

    def sorry_chain(self, name: str) -> list[dict]:
        """Chains from `name` to every declaration carrying the sorry axiom."""
        chains = []
        for member in sorted(self.dependency_cone(name) | {name}):
            decl = self.declarations.get(member)
            if decl is None or SORRY_AXIOM not in decl.axioms_used:
                continue
            path = self._shortest_path(name, member)
            if path is not None:
                chains.append({"introducer": member, "chain": list(path)})
        return chains

    def suspicious_nodes(self) -> list[dict]:
        return [
            {"name": name, "tags": sorted(t.value for t in tags)}
            for name, tags in sorted(self.tagged_declarations().items())
        ]

    def cone_listing(self, name: str) -> dict:
        cone = self.dependency_cone(name)
        return {
            "name": name,
            "cone_size": len(cone),
            "members": sorted(cone),
        }

    def declarations_in_files(self, files: set[str]) -> set[str]:
        return {d.name for d in self.declarations.values() if d.file in files}

    def dependents_of(self, names: set[str]) -> set[str]:
        """All declarations whose dependency cone intersects `names`."""
        result = set()
        for decl_name in self.declarations:
            if names & (self.dependency_cone(decl_name) | {decl_name}):
                result.add(decl_name)
        return result


_EMPTY_DECL = DeclarationRecord(name="", kind=DeclKind.OTHER)


def _tag_counts(tagged: dict[str, frozenset[StructuralTag]]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for tags in tagged.values():
        for tag in tags:
            counts[tag.value] = counts.get(tag.value, 0) + 1
    return dict(sorted(counts.items()))
