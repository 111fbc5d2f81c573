"""Tiny line-oriented formal language used by the built-in toolchain.

The engine is toolchain-agnostic: build verification and declaration export
are pluggable seams. This module backs the shipped "toy" implementations of
both so that end-to-end runs and tests need no external proof assistant.

Grammar (one declaration per line, after comment/string stripping):

    theorem <name> [uses <ref> ...] := <body>
    def <name> [uses <ref> ...] := <body>
    structure <name> [uses <ref> ...]
    class <name> [uses <ref> ...]
    instance <name> of <class> [uses <ref> ...] := <body>
    axiom <name>
    #fail <message>          -- deliberate build failure marker

Bodies are single words naming a proof-term shape: `proof` (ordinary),
`sorry` (placeholder; introduces the `#sorry` axiom), `trivial`,
`assumption`, `projection`, `construct`, `exfalso`, `subsingleton`.
An optional trailing `binders <total> unused <k>` annotates binder usage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .depgraph import (
    SORRY_AXIOM,
    BodyShape,
    DeclarationRecord,
    DeclKind,
    ProofTermFeatures,
)
from .lexical import strip_to_code

SOURCE_SUFFIXES = (".fml", ".lean")

_BODY_SHAPES = {
    "proof": BodyShape.OTHER,
    "sorry": BodyShape.OTHER,
    "trivial": BodyShape.VACUOUS_CONSTANT,
    "assumption": BodyShape.SINGLE_BOUND_VARIABLE,
    "projection": BodyShape.FIELD_PROJECTION_OF_BOUND_VARIABLE,
    "construct": BodyShape.CONSTRUCTOR_APPLICATION,
    "exfalso": BodyShape.EXFALSO_APPLICATION,
    "subsingleton": BodyShape.SUBSINGLETON_ELIM_APPLICATION,
}

_KIND_WORDS = {
    "theorem": DeclKind.THEOREM,
    "def": DeclKind.DEFINITION,
    "structure": DeclKind.STRUCTURE,
    "class": DeclKind.CLASS,
    "instance": DeclKind.INSTANCE,
    "axiom": DeclKind.AXIOM,
}


@dataclass
class ParsedDecl:
    name: str
    kind: DeclKind
    refs: list[str]
    body: str | None
    instance_of: str | None
    file: str
    line: int
    binders_total: int = 0
    unused_binders: int = 0


@dataclass
class ParseIssue:
    file: str
    line: int
    message: str


@dataclass
class ParsedProject:
    declarations: list[ParsedDecl] = field(default_factory=list)
    failures: list[ParseIssue] = field(default_factory=list)


def source_files(workspace: Path) -> list[Path]:
    files: list[Path] = []
    for suffix in SOURCE_SUFFIXES:
        files.extend(
            p
            for p in Path(workspace).rglob(f"*{suffix}")
            if ".git" not in p.parts and not p.is_symlink()
        )
    return sorted(files)


def parse_file(path: Path, relative_to: Path | None = None) -> ParsedProject:
    rel = str(path.relative_to(relative_to)) if relative_to else str(path)
    project = ParsedProject()
    text = path.read_text(encoding="utf-8")
    for lineno, raw_line in enumerate(strip_to_code(text).splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        if line.startswith("#fail"):
            message = line[len("#fail"):].strip() or "deliberate failure"
            project.failures.append(ParseIssue(rel, lineno, message))
            continue
        words = line.split()
        kind = _KIND_WORDS.get(words[0])
        if kind is None:
            project.failures.append(
                ParseIssue(rel, lineno, f"unrecognized declaration head {words[0]!r}")
            )
            continue
        decl, issue = _parse_decl(words, kind, rel, lineno)
        if issue is not None:
            project.failures.append(issue)
        if decl is not None:
            project.declarations.append(decl)
    return project


def parse_workspace(workspace: Path) -> ParsedProject:
    workspace = Path(workspace)
    project = ParsedProject()
    for path in source_files(workspace):
        parsed = parse_file(path, relative_to=workspace)
        project.declarations.extend(parsed.declarations)
        project.failures.extend(parsed.failures)
    names = {d.name for d in project.declarations}
    seen: set[str] = set()
    for decl in project.declarations:
        if decl.name in seen:
            project.failures.append(
                ParseIssue(decl.file, decl.line, f"duplicate declaration {decl.name!r}")
            )
        seen.add(decl.name)
        for ref in decl.refs:
            if ref not in names:
                project.failures.append(
                    ParseIssue(decl.file, decl.line, f"unknown reference {ref!r}")
                )
    return project


def _parse_decl(
    words: list[str], kind: DeclKind, rel: str, lineno: int
) -> tuple[ParsedDecl | None, ParseIssue | None]:
    if len(words) < 2:
        return None, ParseIssue(rel, lineno, "declaration missing a name")
    name = words[1]
    rest = words[2:]
    instance_of = None
    if kind is DeclKind.INSTANCE:
        if len(rest) >= 2 and rest[0] == "of":
            instance_of = rest[1]
            rest = rest[2:]
        else:
            return None, ParseIssue(rel, lineno, "instance requires `of <class>`")
    refs: list[str] = []
    body: str | None = None
    binders_total = 0
    unused = 0
    i = 0
    while i < len(rest):
        word = rest[i]
        if word == "uses":
            i += 1
            while i < len(rest) and rest[i] not in (":=", "binders"):
                refs.append(rest[i])
                i += 1
        elif word == ":=":
            if i + 1 >= len(rest):
                return None, ParseIssue(rel, lineno, "missing body after `:=`")
            body = rest[i + 1]
            if body not in _BODY_SHAPES:
                return None, ParseIssue(rel, lineno, f"unknown body {body!r}")
            i += 2
        elif word == "binders":
            if i + 3 >= len(rest) or rest[i + 2] != "unused":
                return None, ParseIssue(rel, lineno, "binders annotation malformed")
            binders_total = int(rest[i + 1])
            unused = int(rest[i + 3])
            i += 4
        else:
            return None, ParseIssue(rel, lineno, f"unexpected word {word!r}")
    needs_body = kind in (DeclKind.THEOREM, DeclKind.DEFINITION, DeclKind.INSTANCE)
    if needs_body and body is None:
        return None, ParseIssue(rel, lineno, f"{kind.value} requires a body")
    if kind is DeclKind.AXIOM and (body is not None or refs):
        return None, ParseIssue(rel, lineno, "axiom takes no body or references")
    decl = ParsedDecl(
        name=name,
        kind=kind,
        refs=refs,
        body=body,
        instance_of=instance_of,
        file=rel,
        line=lineno,
        binders_total=binders_total,
        unused_binders=unused,
    )
    if instance_of is not None and instance_of not in refs:
        decl.refs.append(instance_of)
    return decl, None


def export_declarations(workspace: Path) -> dict:
    """Toy declaration exporter: workspace -> declgraph/v1 document."""
    project = parse_workspace(Path(workspace))
    names = {d.name for d in project.declarations}
    records = []
    for decl in project.declarations:
        axioms: set[str] = set()
        if decl.body == "sorry":
            axioms.add(SORRY_AXIOM)
        if decl.kind is DeclKind.AXIOM:
            axioms.add(decl.name)
        if decl.kind is DeclKind.AXIOM:
            features = ProofTermFeatures()
        else:
            features = ProofTermFeatures(
                body_shape=_BODY_SHAPES.get(decl.body or "proof", BodyShape.OTHER),
                unused_binder_count=decl.unused_binders,
                binders_total=decl.binders_total,
                constructor_args_reference_project=bool(decl.refs)
                and decl.body == "construct",
            )
        records.append(
            DeclarationRecord(
                name=decl.name,
                kind=decl.kind,
                refs=frozenset(r for r in decl.refs if r in names),
                axioms_used=frozenset(axioms),
                features=features,
                file=decl.file,
                range=(decl.line, decl.line),
                is_project_local=True,
                instance_of=decl.instance_of,
            ).to_payload()
        )
    records.sort(key=lambda r: r["name"])
    return {"schema": "declgraph/v1", "declarations": records}
