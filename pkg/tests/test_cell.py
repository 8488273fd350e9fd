"""Cell contracts: mixing, aggregation, shapes, and mixed/discrete agreement."""

import numpy as np
import pytest
import torch

from conftest import check_param_gradients
from defectnas.cell import (DiscreteCell, MixedCell, MixedEdge, NORMAL,
                            REDUCTION, edge_keys, mixed_edge_forward,
                            node_aggregate)
from defectnas.exceptions import GenotypeError, ShapeError
from defectnas.ops import ALL_KINDS, OpKind, OpSettings

SETTINGS = OpSettings()


def test_edge_count_matches_dag():
    assert len(edge_keys(4)) == 14
    assert edge_keys(1) == [(0, 2), (1, 2)]
    assert len(edge_keys(3)) == 2 + 3 + 4


def test_single_alive_op_passes_through():
    torch.manual_seed(0)
    edge = MixedEdge([OpKind.IDENTITY], 4, 1, SETTINGS)
    x = torch.randn(1, 4, 8, 8)
    out = mixed_edge_forward(x, edge, torch.tensor([3.7]))
    assert torch.equal(out, x)


def test_equal_logits_mix_evenly():
    torch.manual_seed(1)
    edge = MixedEdge([OpKind.IDENTITY, OpKind.ZERO], 4, 1, SETTINGS)
    x = torch.randn(1, 4, 8, 8)
    out = mixed_edge_forward(x, edge, torch.zeros(2))
    assert torch.allclose(out, 0.5 * x, atol=1e-7)


def test_two_element_softmax_weights():
    weights = torch.softmax(torch.tensor([1.0, 0.0]), dim=0)
    assert round(float(weights[0]), 6) == 0.731059
    assert round(float(weights[1]), 6) == 0.268941


def test_mixed_edge_logit_length_mismatch():
    edge = MixedEdge([OpKind.IDENTITY, OpKind.ZERO], 4, 1, SETTINGS)
    with pytest.raises(ShapeError):
        mixed_edge_forward(torch.randn(1, 4, 8, 8), edge, torch.zeros(3))


def test_node_aggregate_cases():
    m = torch.randn(1, 4, 8, 8)
    assert torch.equal(node_aggregate([m]), m)
    assert torch.all(node_aggregate([m, -m]) == 0)
    ones = torch.ones(1, 2, 4, 4)
    assert torch.all(node_aggregate([ones, 2 * ones, 3 * ones]) == 6)
    with pytest.raises(ShapeError):
        node_aggregate([m, torch.randn(1, 4, 4, 4)])
    with pytest.raises(ShapeError):
        node_aggregate([])


def _uniform_logits_fn(cell):
    return lambda i, j: torch.zeros(len(cell.edges[f"{i}-{j}"].ops))


def test_cell_output_width_and_sizes():
    torch.manual_seed(2)
    for cell_type, expect in ((NORMAL, 16), (REDUCTION, 8)):
        cell = MixedCell(4, 8, 8, 8, cell_type, False, SETTINGS)
        out = cell(torch.randn(2, 8, 16, 16), torch.randn(2, 8, 16, 16),
                   _uniform_logits_fn(cell))
        assert out.shape == (2, 32, expect, expect)


def test_cell_zero_dominant_collapses_to_residual():
    torch.manual_seed(3)
    cell = MixedCell(4, 8, 8, 8, NORMAL, False, SETTINGS)
    s0, s1 = torch.randn(1, 8, 16, 16), torch.randn(1, 8, 16, 16)
    zero_pos = list(OpKind).index(OpKind.ZERO)

    def logits_fn(i, j):
        logits = torch.full((11,), -20.0)
        logits[zero_pos] = 20.0
        return logits

    out = cell(s0, s1, logits_fn)
    assert torch.allclose(out, cell.residual(s1), atol=1e-5)


def _random_node_pairs(rng, n_intermediate, kinds=None):
    kinds = kinds or [k for k in ALL_KINDS]
    pairs = []
    for pos in range(n_intermediate):
        sources = rng.choice(pos + 2, size=2, replace=False)
        pairs.append(tuple(
            (int(s), kinds[int(rng.integers(len(kinds)))])
            for s in sorted(sources)))
    return tuple(pairs)


@pytest.mark.parametrize("cell_type", [NORMAL, REDUCTION])
def test_one_hot_mixed_equals_discrete(cell_type):
    torch.manual_seed(4)
    rng = np.random.default_rng(7)
    cell = MixedCell(4, 8, 8, 8, cell_type, False, SETTINGS)
    pairs = _random_node_pairs(rng, 4)
    chosen = {}
    for pos, node in enumerate(pairs):
        for source, kind in node:
            chosen[(source, pos + 2)] = kind

    def logits_fn(i, j):
        logits = torch.full((11,), -20.0)
        kind = chosen.get((i, j), OpKind.ZERO)
        logits[list(OpKind).index(kind)] = 20.0
        return logits

    discrete = DiscreteCell.from_mixed(cell, pairs)
    s0, s1 = torch.randn(2, 8, 16, 16), torch.randn(2, 8, 16, 16)
    mixed_out = cell(s0, s1, logits_fn)
    discrete_out = discrete(s0, s1)
    assert torch.allclose(mixed_out, discrete_out, atol=1e-4)


def test_discrete_cell_rejects_duplicate_sources():
    pairs = (((0, OpKind.IDENTITY), (0, OpKind.ZERO)),)
    with pytest.raises(GenotypeError):
        DiscreteCell(pairs, 4, 4, 4, NORMAL, False, SETTINGS)


def test_discrete_all_identity_composition():
    torch.manual_seed(5)
    pairs = tuple((((0, OpKind.IDENTITY), (1, OpKind.IDENTITY)))
                  for _ in range(4))
    cell = DiscreteCell(pairs, 8, 8, 8, NORMAL, False, SETTINGS)
    s0, s1 = torch.randn(1, 8, 16, 16), torch.randn(1, 8, 16, 16)
    out = cell(s0, s1)
    node = cell.preprocess0(s0) + cell.preprocess1(s1)
    expected = torch.cat([node] * 4, dim=1) + cell.residual(s1)
    assert torch.allclose(out, expected, atol=1e-6)


def test_discrete_zero_node_slice_is_zero():
    torch.manual_seed(6)
    pairs = (
        ((0, OpKind.ZERO), (1, OpKind.ZERO)),
        ((0, OpKind.IDENTITY), (2, OpKind.IDENTITY)),
    )
    cell = DiscreteCell(pairs, 8, 8, 8, NORMAL, False, SETTINGS)
    s0, s1 = torch.randn(1, 8, 16, 16), torch.randn(1, 8, 16, 16)
    out = cell(s0, s1) - cell.residual(s1)
    assert torch.all(out[:, :8] == 0)  # node 2's concat block
    assert not torch.all(out[:, 8:] == 0)


@pytest.mark.parametrize("cell_type", [NORMAL, REDUCTION])
def test_discrete_shape_matches_mixed_over_random_genotypes(cell_type):
    torch.manual_seed(7)
    rng = np.random.default_rng(11)
    mixed = MixedCell(3, 6, 6, 6, cell_type, False, SETTINGS)
    s0, s1 = torch.randn(1, 6, 16, 16), torch.randn(1, 6, 16, 16)
    mixed_shape = mixed(s0, s1, _uniform_logits_fn(mixed)).shape
    for _ in range(10):
        pairs = _random_node_pairs(rng, 3)
        discrete = DiscreteCell(pairs, 6, 6, 6, cell_type, False, SETTINGS)
        assert discrete(s0, s1).shape == mixed_shape


def test_alpha_gradients_match_finite_differences():
    torch.manual_seed(8)
    cell = MixedCell(2, 4, 4, 4, NORMAL, False, SETTINGS).double()
    logits = torch.nn.Parameter(0.01 * torch.randn(len(edge_keys(2)), 11,
                                                   dtype=torch.float64))
    keys = edge_keys(2)
    s0 = torch.randn(1, 4, 8, 8, dtype=torch.float64)
    s1 = torch.randn(1, 4, 8, 8, dtype=torch.float64)
    projection = torch.randn(1, 8, 8, 8, dtype=torch.float64)

    def loss_fn():
        out = cell(s0, s1, lambda i, j: logits[keys.index((i, j))])
        return (out * projection).sum()

    rng = np.random.default_rng(13)
    picks = [(0, int(i)) for i in rng.choice(logits.numel(), 10, replace=False)]
    failures = check_param_gradients(loss_fn, [logits], picks)
    assert not failures, f"alpha gradient mismatches: {failures}"


def test_mixed_cell_reduction_edge_strides():
    cell = MixedCell(2, 4, 4, 4, REDUCTION, False, SETTINGS)
    assert cell.edges["0-2"].stride == 2
    assert cell.edges["1-2"].stride == 2
    assert cell.edges["2-3"].stride == 1
