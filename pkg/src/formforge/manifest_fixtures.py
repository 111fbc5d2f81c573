"""Synthetic targets manifests for simulations and tests.

Targets form a layered DAG: each statement may depend on a few earlier ones,
recorded as a `uses: <id> <id>` line in its notes, which the planner turns
into task dependency edges. A small fraction of targets have no source
proof and are expected to be axiomatized.
"""

from __future__ import annotations

import json
from pathlib import Path

from .seeds import DecisionRng

_SECTIONS = ["1.1", "1.2", "2.1", "2.3", "3.1", "3.4", "4.2", "5.1"]
_SHAPES = [
    "a closure property of the basic construction",
    "a counting identity over the finite structure",
    "monotonicity of the derived operator",
    "the composition law for morphisms",
    "an extremal bound via the exchange argument",
    "the duality between the two presentations",
]


def synthetic_manifest(
    target_count: int = 40,
    seed: int = 7,
    book_title: str = "Synthetic Structures",
    axiom_fraction: float = 0.05,
    max_uses: int = 2,
) -> dict:
    rng = DecisionRng(seed)
    targets = []
    for index in range(1, target_count + 1):
        target_id = f"T{index:02d}"
        uses: list[str] = []
        if index > 1:
            for k in range(max_uses):
                if rng.chance(f"use/{index}/{k}", 0.45):
                    dep_index = rng.randint(f"dep/{index}/{k}", 1, index - 1)
                    dep_id = f"T{dep_index:02d}"
                    if dep_id not in uses:
                        uses.append(dep_id)
        has_proof = not rng.chance(f"axiomatize/{index}", axiom_fraction)
        label = ("Theorem" if index % 3 else "Lemma") + f" {index}"
        section = _SECTIONS[rng.randint(f"section/{index}", 0, len(_SECTIONS) - 1)]
        shape = _SHAPES[rng.randint(f"shape/{index}", 0, len(_SHAPES) - 1)]
        notes = f"uses: {' '.join(uses)}" if uses else ""
        targets.append(
            {
                "id": target_id,
                "book_location": {"section": section, "label": label},
                "statement_text": f"{label} ({section}): {shape}.",
                "has_source_proof": has_proof,
                "notes": notes,
            }
        )
    return {
        "schema": "targets/v1",
        "book": {"title": book_title, "source_ref": "synthetic"},
        "targets": targets,
    }


def write_synthetic_manifest(path: Path, **kwargs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(synthetic_manifest(**kwargs), indent=2) + "\n", encoding="utf-8"
    )
    return path
