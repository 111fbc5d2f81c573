"""Declaration-graph fixture corpus.

Generates the test and demo exports: a realistic 11-node dependency cone
around an integral-identity theorem, a corpus of minimal positive and
negative fixtures for every structural tag, and seeded random DAG exports
for property testing. `formforge fixtures declgraph` writes them to disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .depgraph import SORRY_AXIOM, StructuralTag
from .seeds import DecisionRng


def _decl(
    name: str,
    kind: str = "theorem",
    refs: list[str] | None = None,
    axioms: list[str] | None = None,
    features: dict | None = None,
    file: str = "Project/Main.fml",
    instance_of: str | None = None,
) -> dict:
    payload = {
        "name": name,
        "kind": kind,
        "refs": refs or [],
        "axioms_used": axioms or [],
        "features": features or {},
        "file": file,
        "range": [1, 1],
        "is_project_local": True,
    }
    if instance_of is not None:
        payload["instance_of"] = instance_of
    return payload


def _doc(declarations: list[dict]) -> dict:
    return {"schema": "declgraph/v1", "declarations": declarations}


def riemann_cone_export() -> dict:
    """Eleven project declarations forming the dependency cone of a target
    theorem about Riemann sums over tagged partitions (39 reference edges)."""
    return _doc(
        [
            _decl("Partition", kind="structure"),
            _decl("n", kind="definition", refs=["Partition"]),
            _decl("points", kind="definition", refs=["n", "Partition"]),
            _decl(
                "TaggedPartition",
                kind="structure",
                refs=["points", "n", "Partition"],
            ),
            _decl("toPartition", kind="definition", refs=["TaggedPartition", "Partition"]),
            _decl(
                "IsTaggedRefinement",
                kind="definition",
                refs=["TaggedPartition", "toPartition", "points", "n"],
            ),
            _decl(
                "tags",
                kind="definition",
                refs=["TaggedPartition", "toPartition", "n"],
            ),
            _decl(
                "assign",
                kind="definition",
                refs=["IsTaggedRefinement", "toPartition", "TaggedPartition", "n"],
            ),
            _decl(
                "riemannSum",
                kind="definition",
                refs=["tags", "toPartition", "TaggedPartition", "points", "n"],
            ),
            _decl(
                "telescope",
                kind="theorem",
                refs=[
                    "IsTaggedRefinement",
                    "assign",
                    "toPartition",
                    "TaggedPartition",
                    "points",
                    "n",
                ],
            ),
            _decl(
                "riemannSum_eq_fiber",
                kind="theorem",
                refs=[
                    "telescope",
                    "riemannSum",
                    "assign",
                    "tags",
                    "IsTaggedRefinement",
                    "toPartition",
                    "TaggedPartition",
                    "points",
                    "n",
                ],
            ),
        ]
    )


@dataclass
class TagFixture:
    name: str
    document: dict
    declaration: str
    expected: set[StructuralTag]


def tag_fixtures() -> list[TagFixture]:
    """At least one positive and two negative fixtures per structural tag."""
    fixtures: list[TagFixture] = []

    def add(name: str, decls: list[dict], decl: str, expected: set[StructuralTag]):
        fixtures.append(TagFixture(name, _doc(decls), decl, expected))

    plain = {"body_shape": "other"}

    # vacuous_body
    add(
        "vacuous_body/positive",
        [_decl("t1", features={"body_shape": "vacuous_constant"})],
        "t1",
        {StructuralTag.VACUOUS_BODY},
    )
    add("vacuous_body/negative_other", [_decl("t1", features=plain)], "t1", set())
    add(
        "vacuous_body/negative_constructor",
        [_decl("t1", features={"body_shape": "constructor_application",
                               "constructor_args_reference_project": True})],
        "t1",
        set(),
    )

    # ignores_params
    add(
        "ignores_params/positive",
        [_decl("t2", features={"unused_binder_count": 2, "binders_total": 3})],
        "t2",
        {StructuralTag.IGNORES_PARAMS},
    )
    add(
        "ignores_params/negative_all_used",
        [_decl("t2", features={"unused_binder_count": 0, "binders_total": 3})],
        "t2",
        set(),
    )
    add(
        "ignores_params/negative_no_binders",
        [_decl("t2", features={"unused_binder_count": 0, "binders_total": 0})],
        "t2",
        set(),
    )

    # proof_by_exfalso
    add(
        "proof_by_exfalso/positive",
        [_decl("t3", features={"body_shape": "exfalso_application"})],
        "t3",
        {StructuralTag.PROOF_BY_EXFALSO},
    )
    add("proof_by_exfalso/negative_plain", [_decl("t3", features=plain)], "t3", set())
    add(
        "proof_by_exfalso/negative_subsingleton",
        [_decl("t3", features={"body_shape": "subsingleton_elim_application"})],
        "t3",
        {StructuralTag.PROOF_BY_SUBSINGLETON},
    )

    # proof_by_subsingleton
    add(
        "proof_by_subsingleton/positive",
        [_decl("t4", features={"body_shape": "subsingleton_elim_application"})],
        "t4",
        {StructuralTag.PROOF_BY_SUBSINGLETON},
    )
    add("proof_by_subsingleton/negative_plain", [_decl("t4", features=plain)], "t4", set())
    add(
        "proof_by_subsingleton/negative_exfalso",
        [_decl("t4", features={"body_shape": "exfalso_application"})],
        "t4",
        {StructuralTag.PROOF_BY_EXFALSO},
    )

    # returns_assumption
    add(
        "returns_assumption/positive",
        [_decl("t5", features={"body_shape": "single_bound_variable"})],
        "t5",
        {StructuralTag.RETURNS_ASSUMPTION},
    )
    add("returns_assumption/negative_plain", [_decl("t5", features=plain)], "t5", set())
    add(
        "returns_assumption/negative_projection",
        [_decl("t5", features={"body_shape": "field_projection_of_bound_variable"})],
        "t5",
        {StructuralTag.FIELD_PROJECTION_BODY},
    )

    # field_projection_body
    add(
        "field_projection_body/positive",
        [_decl("t6", features={"body_shape": "field_projection_of_bound_variable",
                               "projected_structure": "Wrapper"})],
        "t6",
        {StructuralTag.FIELD_PROJECTION_BODY},
    )
    add("field_projection_body/negative_plain", [_decl("t6", features=plain)], "t6", set())
    add(
        "field_projection_body/negative_variable",
        [_decl("t6", features={"body_shape": "single_bound_variable"})],
        "t6",
        {StructuralTag.RETURNS_ASSUMPTION},
    )

    # custom_hypothesis_in_type
    add(
        "custom_hypothesis_in_type/positive",
        [
            _decl("MyClass", kind="class"),
            _decl("inst1", kind="instance", instance_of="MyClass",
                  refs=["MyClass"],
                  features={"body_shape": "constructor_application",
                            "constructor_args_reference_project": True}),
            _decl("t7", refs=["MyClass"],
                  features={"body_shape": "other",
                            "instance_implicit_project_classes": ["MyClass"]}),
        ],
        "t7",
        {StructuralTag.CUSTOM_HYPOTHESIS_IN_TYPE},
    )
    add(
        "custom_hypothesis_in_type/negative_no_instances",
        [_decl("t7", features=plain)],
        "t7",
        set(),
    )
    add(
        "custom_hypothesis_in_type/negative_plain_ref",
        [
            _decl("MyClass", kind="class"),
            _decl("inst1", kind="instance", instance_of="MyClass",
                  refs=["MyClass"],
                  features={"body_shape": "constructor_application",
                            "constructor_args_reference_project": True}),
            _decl("t7", refs=["MyClass"], features=plain),
        ],
        "t7",
        set(),
    )

    # trivial_constructor
    add(
        "trivial_constructor/positive",
        [_decl("t8", features={"body_shape": "constructor_application",
                               "constructor_args_reference_project": False})],
        "t8",
        {StructuralTag.TRIVIAL_CONSTRUCTOR},
    )
    add(
        "trivial_constructor/negative_project_args",
        [_decl("t8", features={"body_shape": "constructor_application",
                               "constructor_args_reference_project": True})],
        "t8",
        set(),
    )
    add("trivial_constructor/negative_plain", [_decl("t8", features=plain)], "t8", set())

    # orphan_class
    add(
        "orphan_class/positive",
        [
            _decl("Orphan", kind="class"),
            _decl("helper", kind="definition", features=plain),
            _decl("user", refs=["helper"], features=plain),
            _decl("misc", kind="definition", features=plain),
            _decl("top", refs=["user", "misc"], features=plain),
        ],
        "Orphan",
        {StructuralTag.ORPHAN_CLASS},
    )
    add(
        "orphan_class/negative_has_instance",
        [
            _decl("Orphan", kind="class"),
            _decl("inst", kind="instance", instance_of="Orphan", refs=["Orphan"],
                  features={"body_shape": "constructor_application",
                            "constructor_args_reference_project": True}),
        ],
        "Orphan",
        set(),
    )
    add(
        "orphan_class/negative_not_a_class",
        [_decl("Orphan", kind="structure")],
        "Orphan",
        set(),
    )

    # trivial_instance
    add(
        "trivial_instance/positive_vacuous",
        [
            _decl("C", kind="class"),
            _decl("inst", kind="instance", instance_of="C", refs=["C"],
                  features={"body_shape": "vacuous_constant"}),
        ],
        "inst",
        {StructuralTag.TRIVIAL_INSTANCE, StructuralTag.VACUOUS_BODY},
    )
    add(
        "trivial_instance/positive_ignores_params",
        [
            _decl("C", kind="class"),
            _decl("inst", kind="instance", instance_of="C", refs=["C"],
                  features={"body_shape": "other",
                            "unused_binder_count": 1, "binders_total": 2}),
        ],
        "inst",
        {StructuralTag.TRIVIAL_INSTANCE, StructuralTag.IGNORES_PARAMS},
    )
    add(
        "trivial_instance/negative_genuine",
        [
            _decl("C", kind="class"),
            _decl("dep", kind="definition", features=plain),
            _decl("inst", kind="instance", instance_of="C", refs=["C", "dep"],
                  features={"body_shape": "constructor_application",
                            "constructor_args_reference_project": True}),
        ],
        "inst",
        set(),
    )
    add(
        "trivial_instance/negative_not_instance",
        [_decl("plain_def", kind="definition",
               features={"body_shape": "vacuous_constant"})],
        "plain_def",
        {StructuralTag.VACUOUS_BODY},
    )

    return fixtures


def sorry_chain_export() -> dict:
    """Three-target chain with the placeholder axiom only at the bottom."""
    return _doc(
        [
            _decl("bottom_lemma", axioms=[SORRY_AXIOM]),
            _decl("middle_theorem", refs=["bottom_lemma"]),
            _decl("top_theorem", refs=["middle_theorem"]),
        ]
    )


def random_export(seed: int, node_count: int, tag_fraction: float = 0.1) -> dict:
    """Seeded random DAG export; edges always point to lower-numbered nodes."""
    rng = DecisionRng(seed)
    decls = []
    for index in range(node_count):
        name = f"d{index:03d}"
        refs = [
            f"d{j:03d}"
            for j in range(index)
            if rng.chance(f"edge/{index}/{j}", min(0.25, 6.0 / max(index, 1)))
        ]
        features: dict = {}
        if rng.chance(f"tag/{index}", tag_fraction):
            features = {"body_shape": "vacuous_constant"}
        axioms = [SORRY_AXIOM] if rng.chance(f"sorry/{index}", 0.05) else []
        decls.append(
            _decl(
                name,
                kind="theorem" if index % 3 else "definition",
                refs=refs,
                axioms=axioms,
                features=features,
            )
        )
    return _doc(decls)


def write_fixture_corpus(out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def dump(relative: str, document: dict) -> None:
        path = out_dir / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
        written.append(path)

    dump("riemann_cone.json", riemann_cone_export())
    dump("sorry_chain.json", sorry_chain_export())
    for fixture in tag_fixtures():
        dump(f"tags/{fixture.name.replace('/', '__')}.json", fixture.document)
    for seed in (1, 2, 3):
        dump(f"random/dag_{seed}.json", random_export(seed, 120))
    return written
