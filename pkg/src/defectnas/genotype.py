"""Discrete architecture descriptions and their on-disk document form.

A genotype lists, for each intermediate node of the normal and the reduction
cell, the two inbound (source node, operation) pairs that survive decoding.
Node indices: 0 and 1 are the two cell inputs, intermediates start at 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .exceptions import GenotypeError, GenotypeParseError
from .ops import OpKind

FORMAT_VERSION = 1


def validate_node_pairs(pairs, where="cell"):
    """Check the DAG constraints of one cell's per-node pair list."""
    if not pairs:
        raise GenotypeError(f"{where}: no intermediate nodes")
    for pos, node in enumerate(pairs):
        node_index = pos + 2
        if len(node) != 2:
            raise GenotypeError(
                f"{where} node {node_index}: expected 2 pairs, got {len(node)}")
        sources = [source for source, _ in node]
        if len(set(sources)) != 2:
            raise GenotypeError(
                f"{where} node {node_index}: duplicate source {sources[0]}")
        for source, kind in node:
            if not isinstance(kind, OpKind):
                raise GenotypeError(
                    f"{where} node {node_index}: invalid operation {kind!r}")
            if not isinstance(source, int) or not 0 <= source < node_index:
                raise GenotypeError(
                    f"{where} node {node_index}: source {source} out of range")


@dataclass(frozen=True)
class Genotype:
    """A decoded discrete architecture plus the provenance of its search."""

    normal: tuple
    reduction: tuple
    config_digest: str = ""
    seed: int = 0
    schedule: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "normal", _freeze_cell(self.normal))
        object.__setattr__(self, "reduction", _freeze_cell(self.reduction))
        object.__setattr__(self, "schedule", tuple(int(s) for s in self.schedule))
        validate_node_pairs(self.normal, "normal")
        validate_node_pairs(self.reduction, "reduction")
        if len(self.normal) != len(self.reduction):
            raise GenotypeError("normal and reduction cells disagree on node count")

    @property
    def n_intermediate(self):
        return len(self.normal)


def _freeze_cell(pairs):
    return tuple(tuple((int(s), k) for s, k in node) for node in pairs)


def _cell_to_doc(pairs):
    return [[[source, kind.op_name] for source, kind in node] for node in pairs]


def serialize_genotype(genotype):
    """Render a genotype as a stable, versioned text document."""
    doc = {
        "format_version": FORMAT_VERSION,
        "config_digest": genotype.config_digest,
        "seed": genotype.seed,
        "schedule": list(genotype.schedule),
        "normal": _cell_to_doc(genotype.normal),
        "reduction": _cell_to_doc(genotype.reduction),
    }
    return json.dumps(doc, indent=2) + "\n"


def _parse_cell(doc, where):
    if not isinstance(doc, list) or not doc:
        raise GenotypeParseError(f"{where}: expected a non-empty node list")
    nodes = []
    for pos, node in enumerate(doc):
        node_index = pos + 2
        if not isinstance(node, list) or len(node) != 2:
            raise GenotypeParseError(
                f"{where} node {node_index}: expected exactly 2 pairs")
        pairs = []
        for pair_pos, pair in enumerate(node):
            loc = f"{where} node {node_index} pair {pair_pos}"
            if not isinstance(pair, list) or len(pair) != 2:
                raise GenotypeParseError(f"{loc}: expected [source, op-name]")
            source, name = pair
            if not isinstance(source, int):
                raise GenotypeParseError(f"{loc}: source must be an integer")
            if source >= node_index or source < 0:
                raise GenotypeParseError(
                    f"{loc}: source {source} out of range for node {node_index}")
            if not isinstance(name, str):
                raise GenotypeParseError(f"{loc}: op-name must be a string")
            try:
                kind = OpKind.from_name(name)
            except Exception:
                raise GenotypeParseError(f"{loc}: unknown operation {name!r}") from None
            pairs.append((source, kind))
        nodes.append(tuple(pairs))
    return tuple(nodes)


def parse_genotype(text):
    """Parse a genotype document; raises GenotypeParseError with a location."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GenotypeParseError(f"not a valid genotype document: {exc}") from None
    if not isinstance(doc, dict):
        raise GenotypeParseError("genotype document must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise GenotypeParseError(f"unsupported format_version: {version!r}")
    for key in ("normal", "reduction"):
        if key not in doc:
            raise GenotypeParseError(f"missing {key!r} cell")
    schedule = doc.get("schedule", [])
    if not isinstance(schedule, list) or any(not isinstance(s, int) for s in schedule):
        raise GenotypeParseError("schedule must be a list of integers")
    try:
        return Genotype(
            normal=_parse_cell(doc["normal"], "normal"),
            reduction=_parse_cell(doc["reduction"], "reduction"),
            config_digest=str(doc.get("config_digest", "")),
            seed=int(doc.get("seed", 0)),
            schedule=tuple(schedule),
        )
    except GenotypeError as exc:
        raise GenotypeParseError(str(exc)) from None


def write_genotype(genotype, path):
    from .fileio import atomic_write_text

    atomic_write_text(path, serialize_genotype(genotype))


def read_genotype(path):
    from pathlib import Path

    return parse_genotype(Path(path).read_text())
