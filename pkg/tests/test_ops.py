"""Candidate operation contracts: shapes, values, gates, and gradients."""

import math

import numpy as np
import pytest
import torch

from conftest import check_param_gradients
from defectnas.exceptions import ConfigError, ShapeError
from defectnas.ops import (ALL_KINDS, OpKind, OpSettings, apply_candidate,
                           make_candidate)


def test_op_table_is_a_bijection():
    assert len(ALL_KINDS) == 11
    assert sorted(k.id for k in ALL_KINDS) == list(range(1, 12))
    assert OpKind.from_name("Sep_conv_3x3") is OpKind.SEP_CONV_3
    assert OpKind.from_id(11) is OpKind.SPATIAL_ATT
    names = [k.op_name for k in ALL_KINDS]
    assert names[0] == "Zero" and names[1] == "Identity"
    assert len(set(names)) == 11


@pytest.mark.parametrize("kind", ALL_KINDS)
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("channels,size", [(1, 8), (3, 9), (8, 16)])
def test_channel_and_size_contract(kind, stride, channels, size):
    op = make_candidate(kind, channels, stride, seed=11)
    x = torch.randn(2, channels, size, size)
    out = op(x)
    expect = size if stride == 1 else math.ceil(size / 2)
    assert out.shape == (2, channels, expect, expect)


def test_sep_conv_preserves_contract():
    op = make_candidate(OpKind.SEP_CONV_3, 8, 1, seed=0)
    assert op(torch.randn(1, 8, 16, 16)).shape == (1, 8, 16, 16)


def test_zero_stride2_emits_zeros():
    op = make_candidate(OpKind.ZERO, 8, 2, seed=0)
    out = op(torch.randn(1, 8, 16, 16))
    assert out.shape == (1, 8, 8, 8)
    assert torch.all(out == 0)


def test_identity_is_exact():
    op = make_candidate(OpKind.IDENTITY, 4, 1, seed=0)
    x = torch.randn(2, 4, 8, 8)
    assert torch.equal(op(x), x)


def test_avg_pool_keeps_constants():
    op = make_candidate(OpKind.AVG_POOL_3, 2, 1, seed=0,
                        settings=OpSettings(pool_norm=False))
    x = torch.full((1, 2, 8, 8), 0.7)
    assert torch.allclose(op(x), x)


def test_max_pool_stride2_window_maxima():
    # brute-force oracle on 1..16 row-major: padded 3x3 windows at stride 2
    op = make_candidate(OpKind.MAX_POOL_3, 1, 2, seed=0,
                        settings=OpSettings(pool_norm=False))
    x = torch.arange(1.0, 17.0).reshape(1, 1, 4, 4)
    out = op(x)
    assert torch.equal(out, torch.tensor([[[[6.0, 8.0], [14.0, 16.0]]]]))


def test_channel_attention_constant_channels_oracle():
    # evaluate the squeeze-excitation formula by hand on constant channels
    op = make_candidate(OpKind.CHANNEL_ATT, 8, 1, seed=5)
    values = torch.linspace(-1.0, 1.0, 8)
    x = values.reshape(1, 8, 1, 1).expand(1, 8, 6, 6).clone()
    out = op(x)

    w1 = op.body.fc1.weight.detach().numpy()
    w2 = op.body.fc2.weight.detach().numpy()
    v = values.numpy()
    gates = 1.0 / (1.0 + np.exp(-(w2 @ np.maximum(w1 @ v, 0.0))))
    expected = v * gates
    assert np.allclose(out[0, :, 0, 0].detach().numpy(), expected, atol=1e-6)
    assert np.all(gates > 0.0) and np.all(gates < 1.0)


def test_spatial_attention_bounded_by_input():
    op = make_candidate(OpKind.SPATIAL_ATT, 4, 1, seed=3)
    x = torch.randn(2, 4, 8, 8)
    out = op(x)
    assert torch.all(out.abs() <= x.abs() + 1e-7)
    gate = out / torch.where(x == 0, torch.ones_like(x), x)
    finite = gate[x != 0]
    assert torch.all(finite > 0.0) and torch.all(finite < 1.0)


def test_zero_op_input_gradient_is_exactly_zero():
    op = make_candidate(OpKind.ZERO, 4, 1, seed=0)
    x = torch.randn(1, 4, 8, 8, requires_grad=True)
    op(x).sum().backward()
    assert torch.all(x.grad == 0)


@pytest.mark.parametrize("kind", [k for k in ALL_KINDS
                                  if k not in (OpKind.ZERO, OpKind.IDENTITY)])
@pytest.mark.parametrize("stride", [1, 2])
def test_param_gradients_match_finite_differences(kind, stride):
    torch.manual_seed(100 + kind.id * 10 + stride)
    op = make_candidate(kind, 4, stride, seed=kind.id).double()
    x = torch.randn(2, 4, 8, 8, dtype=torch.float64)
    out_shape = op(x).shape
    projection = torch.randn(out_shape, dtype=torch.float64)

    def loss_fn():
        return (op(x) * projection).sum()

    params = [p for p in op.parameters() if p.requires_grad]
    if not params:
        pytest.skip("op has no parameters")
    rng = np.random.default_rng(kind.id * 100 + stride)
    picks = []
    for pos, p in enumerate(params):
        for index in rng.choice(p.numel(), size=min(2, p.numel()), replace=False):
            picks.append((pos, int(index)))
    failures = check_param_gradients(loss_fn, params, picks)
    assert not failures, f"gradient mismatches: {failures}"


def test_make_candidate_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        make_candidate("not-a-kind", 4, 1)
    with pytest.raises(ConfigError):
        make_candidate(OpKind.SEP_CONV_3, 0, 1)
    with pytest.raises(ConfigError):
        make_candidate(OpKind.SEP_CONV_3, 4, 3)


def test_apply_candidate_checks_channels():
    op = make_candidate(OpKind.SEP_CONV_3, 4, 1, seed=0)
    with pytest.raises(ShapeError):
        apply_candidate(op, torch.randn(1, 3, 8, 8))
    with pytest.raises(ShapeError):
        apply_candidate(op, torch.randn(4, 8, 8))


def test_double_sep_conv_stacks_twice():
    single = make_candidate(OpKind.SEP_CONV_3, 8, 1, seed=0)
    double = make_candidate(OpKind.SEP_CONV_3, 8, 1, seed=0,
                            settings=OpSettings(double_sep_conv=True))
    count = lambda op: sum(p.numel() for p in op.parameters()
                           if p.dim() == 4)
    assert count(double) == 2 * count(single)
    assert double(torch.randn(1, 8, 12, 12)).shape == (1, 8, 12, 12)


def test_pool_norm_flag_controls_normalization():
    import torch.nn as nn

    with_norm = make_candidate(OpKind.MAX_POOL_3, 4, 1, seed=0)
    without = make_candidate(OpKind.MAX_POOL_3, 4, 1, seed=0,
                             settings=OpSettings(pool_norm=False))
    assert any(isinstance(m, nn.BatchNorm2d) for m in with_norm.modules())
    assert not any(isinstance(m, nn.BatchNorm2d) for m in without.modules())


def test_make_candidate_is_deterministic_per_seed():
    a = make_candidate(OpKind.SEP_CONV_5, 6, 1, seed=42)
    b = make_candidate(OpKind.SEP_CONV_5, 6, 1, seed=42)
    c = make_candidate(OpKind.SEP_CONV_5, 6, 1, seed=43)
    for (pa, pb) in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    assert any(not torch.equal(pa, pc)
               for pa, pc in zip(a.parameters(), c.parameters()))
