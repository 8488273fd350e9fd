"""Architecture weights: per-edge operation logits with alive masks.

Logits are shared across all normal cells and, separately, across all
reduction cells. Each edge keeps a full-length logit vector for the whole
search; pruning only shrinks the alive mask (and drops the corresponding
supernet modules), so surviving logits carry over unchanged and the softmax
over the survivors renormalizes implicitly.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .cell import CELL_TYPES, NORMAL, REDUCTION, edge_keys
from .exceptions import ScheduleError, StateError
from .genotype import Genotype
from .ops import ALL_KINDS, OpKind
from .rng import substream_seed


class ArchWeights(nn.Module):
    """The mutable object of the search: logits and alive sets per edge."""

    def __init__(self, n_intermediate=4, schedule=(7, 4, 2, 1), seed=0,
                 init_scale=1e-3):
        super().__init__()
        self.n_intermediate = n_intermediate
        self.schedule = tuple(int(k) for k in schedule)
        self.edge_list = edge_keys(n_intermediate)
        self.logits = nn.ParameterDict()
        self.alive = {}
        with torch.random.fork_rng():
            torch.manual_seed(substream_seed(seed, "init", "arch"))
            for cell_type in CELL_TYPES:
                for i, j in self.edge_list:
                    key = self.key(cell_type, i, j)
                    self.logits[key] = nn.Parameter(
                        init_scale * torch.randn(len(ALL_KINDS)))
                    self.alive[key] = list(ALL_KINDS)

    @staticmethod
    def key(cell_type, i, j):
        return f"{cell_type}_{i}_{j}"

    def alive_kinds(self, cell_type, i, j):
        return tuple(self.alive[self.key(cell_type, i, j)])

    def full_logits(self, cell_type, i, j):
        return self.logits[self.key(cell_type, i, j)]

    def sliced_logits(self, cell_type, i, j):
        """Logits restricted to the edge's alive ops, in canonical op order."""
        key = self.key(cell_type, i, j)
        idx = [kind.id - 1 for kind in self.alive[key]]
        return self.logits[key][idx]

    def mixing_weights(self, cell_type, i, j):
        return F.softmax(self.sliced_logits(cell_type, i, j), dim=0)

    def alive_counts(self):
        return [len(self.alive[self.key(ct, i, j)])
                for ct in CELL_TYPES for i, j in self.edge_list]

    def export_state(self):
        return {
            "n_intermediate": self.n_intermediate,
            "schedule": list(self.schedule),
            "logits": {k: v.detach().clone() for k, v in self.logits.items()},
            "alive": {k: [kind.id for kind in kinds]
                      for k, kinds in self.alive.items()},
        }

    def load_state(self, state):
        if state["n_intermediate"] != self.n_intermediate:
            raise StateError("architecture state has a different node count")
        self.schedule = tuple(state["schedule"])
        with torch.no_grad():
            for key, value in state["logits"].items():
                self.logits[key].copy_(value)
        self.alive = {k: [OpKind.from_id(i) for i in ids]
                      for k, ids in state["alive"].items()}


def prune_edges(arch, top_k):
    """Keep each edge's top_k alive ops by logit; ties favor the smaller op id.

    Surviving logits are retained unchanged; callers must drop the pruned
    supernet modules afterwards (see ``Supernet.sync_alive``).
    """
    if top_k < 1:
        raise ScheduleError(f"top_k must be >= 1, got {top_k}")
    for cell_type in CELL_TYPES:
        for i, j in arch.edge_list:
            key = arch.key(cell_type, i, j)
            alive = arch.alive[key]
            if top_k > len(alive):
                raise ScheduleError(
                    f"top_k={top_k} exceeds alive count {len(alive)} on edge {key}")
            logits = arch.logits[key].detach()
            ranked = sorted(alive,
                            key=lambda kind: (-float(logits[kind.id - 1]), kind.id))
            keep = set(ranked[:top_k])
            arch.alive[key] = [kind for kind in ALL_KINDS if kind in keep]
    return arch


def _edge_score(arch, cell_type, i, j, kind):
    # Softmax over the edge's full logit vector: shifting all of an edge's
    # logits by a constant therefore never changes any decode decision.
    weights = F.softmax(arch.full_logits(cell_type, i, j).detach(), dim=0)
    return float(weights[kind.id - 1])


def decode_genotype(arch, config_digest="", seed=0):
    """Read off the determined architecture once each edge carries one op.

    Per intermediate node the two strongest non-Zero inbound edges (by their
    surviving op's softmax score) are kept; nodes short of two non-Zero edges
    are filled with the highest-scoring Zero edges so the genotype stays
    well-formed. Ties break toward the smaller source index.
    """
    for cell_type in CELL_TYPES:
        for i, j in arch.edge_list:
            alive = arch.alive[arch.key(cell_type, i, j)]
            if len(alive) != 1:
                raise StateError(
                    f"edge {arch.key(cell_type, i, j)} has {len(alive)} alive ops; "
                    "decode requires exactly one")
    cells = {}
    for cell_type in CELL_TYPES:
        nodes = []
        for pos in range(arch.n_intermediate):
            j = pos + 2
            candidates = []
            for i in range(j):
                kind = arch.alive[arch.key(cell_type, i, j)][0]
                candidates.append((i, kind, _edge_score(arch, cell_type, i, j, kind)))
            non_zero = [c for c in candidates if c[1] is not OpKind.ZERO]
            zeros = [c for c in candidates if c[1] is OpKind.ZERO]
            chosen = sorted(non_zero, key=lambda c: (-c[2], c[0]))[:2]
            if len(chosen) < 2:
                fill = sorted(zeros, key=lambda c: (-c[2], c[0]))
                chosen += fill[: 2 - len(chosen)]
            pairs = sorted(((i, kind) for i, kind, _ in chosen), key=lambda p: p[0])
            nodes.append(tuple(pairs))
        cells[cell_type] = tuple(nodes)
    return Genotype(normal=cells[NORMAL], reduction=cells[REDUCTION],
                    config_digest=config_digest, seed=seed,
                    schedule=arch.schedule)
