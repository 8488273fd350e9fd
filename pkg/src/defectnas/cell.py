"""Cell graphs: the relaxed mixed form searched over, and the discrete form.

A cell is a DAG over 2 input nodes (indices 0 and 1: the previous-previous
and previous cell outputs) and N intermediate nodes (indices 2..N+1). Every
(source, intermediate) pair with source < target carries one edge. The cell
output concatenates all intermediate node maps and adds a projected residual
of the previous cell output. Reduction cells stride only on edges leaving
the two input nodes; that is the unique assignment keeping all intermediate
maps shape-compatible.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ConfigError, ShapeError, StateError
from .genotype import validate_node_pairs
from .ops import ALL_KINDS, FactorizedReduce, OpKind, OpSettings, make_candidate

NORMAL = "normal"
REDUCTION = "reduction"
CELL_TYPES = (NORMAL, REDUCTION)


def edge_keys(n_intermediate):
    """All (source, target) pairs of the cell DAG in canonical order."""
    keys = []
    for j in range(2, 2 + n_intermediate):
        for i in range(j):
            keys.append((i, j))
    return keys


class ReLUConvBN(nn.Module):
    """Pointwise projection used to bring cell inputs to the working width."""

    def __init__(self, c_in, c_out, settings):
        super().__init__()
        self.op = nn.Sequential(
            nn.ReLU(inplace=False),
            nn.Conv2d(c_in, c_out, 1, bias=False),
            nn.BatchNorm2d(c_out, affine=settings.affine,
                           track_running_stats=settings.track_running_stats),
        )

    def forward(self, x):
        return self.op(x)


class MixedEdge(nn.Module):
    """All currently-alive candidate ops on one edge."""

    def __init__(self, kinds, channels, stride, settings):
        super().__init__()
        self.stride = stride
        self.ops = nn.ModuleDict()
        for kind in sorted(kinds, key=lambda k: k.id):
            self.ops[kind.op_name] = make_candidate(kind, channels, stride,
                                                    settings=settings)

    @property
    def kinds(self):
        return tuple(OpKind.from_name(name) for name in self.ops)

    def prune_to(self, kinds):
        keep = {k.op_name for k in kinds}
        for name in [n for n in self.ops if n not in keep]:
            del self.ops[name]

    def forward(self, x, logits):
        return mixed_edge_forward(x, self, logits)


def mixed_edge_forward(x, edge, logits):
    """Softmax-weighted sum of the edge's alive operations."""
    ops = list(edge.ops.values())
    if logits.dim() != 1 or logits.shape[0] != len(ops):
        raise ShapeError(
            f"expected {len(ops)} logits, got shape {tuple(logits.shape)}")
    weights = F.softmax(logits, dim=0)
    out = None
    for weight, op in zip(weights, ops):
        term = weight * op(x)
        out = term if out is None else out + term
    return out


def node_aggregate(incoming):
    """Element-wise sum of all inbound edge outputs for one node."""
    if not incoming:
        raise ShapeError("node has no inbound maps")
    out = incoming[0]
    for m in incoming[1:]:
        if m.shape != out.shape:
            raise ShapeError(
                f"inbound shapes differ: {tuple(out.shape)} vs {tuple(m.shape)}")
        out = out + m
    return out


class _CellBase(nn.Module):
    def __init__(self, n_intermediate, c_prev_prev, c_prev, channels, cell_type,
                 reduction_prev, settings):
        super().__init__()
        if cell_type not in CELL_TYPES:
            raise ConfigError(f"unknown cell type: {cell_type!r}")
        self.cell_type = cell_type
        self.n_intermediate = n_intermediate
        self.channels = channels
        self.c_prev_prev = c_prev_prev
        self.c_prev = c_prev
        self.reduction_prev = reduction_prev
        self.out_channels = n_intermediate * channels
        if reduction_prev:
            self.preprocess0 = FactorizedReduce(c_prev_prev, channels, settings)
        else:
            self.preprocess0 = ReLUConvBN(c_prev_prev, channels, settings)
        self.preprocess1 = ReLUConvBN(c_prev, channels, settings)
        res_stride = 2 if cell_type == REDUCTION else 1
        self.residual = nn.Conv2d(c_prev, self.out_channels, 1,
                                  stride=res_stride, bias=False)

    def edge_stride(self, source):
        return 2 if self.cell_type == REDUCTION and source < 2 else 1


class MixedCell(_CellBase):
    """Relaxed cell: every edge carries all alive ops mixed by softmax weights."""

    def __init__(self, n_intermediate, c_prev_prev, c_prev, channels, cell_type,
                 reduction_prev, settings, kinds=ALL_KINDS):
        super().__init__(n_intermediate, c_prev_prev, c_prev, channels,
                         cell_type, reduction_prev, settings)
        self.edges = nn.ModuleDict()
        for i, j in edge_keys(n_intermediate):
            self.edges[f"{i}-{j}"] = MixedEdge(kinds, channels,
                                               self.edge_stride(i), settings)

    def forward(self, s0, s1, logits_fn):
        """``logits_fn(i, j)`` supplies the alive-op logits for edge (i, j)."""
        states = [self.preprocess0(s0), self.preprocess1(s1)]
        for j in range(2, 2 + self.n_intermediate):
            inbound = [self.edges[f"{i}-{j}"](states[i], logits_fn(i, j))
                       for i in range(j)]
            states.append(node_aggregate(inbound))
        return torch.cat(states[2:], dim=1) + self.residual(s1)


class DiscreteCell(_CellBase):
    """Determined cell: each node sums exactly its two chosen inbound edges."""

    def __init__(self, node_pairs, c_prev_prev, c_prev, channels, cell_type,
                 reduction_prev, settings, _build_ops=True):
        validate_node_pairs(node_pairs, cell_type)
        super().__init__(len(node_pairs), c_prev_prev, c_prev, channels,
                         cell_type, reduction_prev, settings)
        self.node_pairs = tuple(tuple(node) for node in node_pairs)
        self.node_ops = nn.ModuleList()
        if _build_ops:
            for node in self.node_pairs:
                for source, kind in node:
                    self.node_ops.append(make_candidate(
                        kind, channels, self.edge_stride(source),
                        settings=settings))

    @classmethod
    def from_mixed(cls, mixed, node_pairs):
        """Build a discrete cell sharing the mixed cell's modules (no copy)."""
        settings = OpSettings()
        cell = cls(node_pairs, mixed.c_prev_prev, mixed.c_prev, mixed.channels,
                   mixed.cell_type, mixed.reduction_prev, settings,
                   _build_ops=False)
        cell.preprocess0 = mixed.preprocess0
        cell.preprocess1 = mixed.preprocess1
        cell.residual = mixed.residual
        for pos, node in enumerate(cell.node_pairs):
            j = pos + 2
            for source, kind in node:
                edge = mixed.edges[f"{source}-{j}"]
                if kind.op_name not in edge.ops:
                    raise StateError(
                        f"edge {source}-{j} no longer carries {kind.op_name}")
                cell.node_ops.append(edge.ops[kind.op_name])
        return cell

    def forward(self, s0, s1):
        states = [self.preprocess0(s0), self.preprocess1(s1)]
        flat = 0
        for node in self.node_pairs:
            inbound = []
            for source, _ in node:
                inbound.append(self.node_ops[flat](states[source]))
                flat += 1
            states.append(node_aggregate(inbound))
        return torch.cat(states[2:], dim=1) + self.residual(s1)
