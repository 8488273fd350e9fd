"""Loss formula oracles and the deep-supervision composition identity."""

import math

import pytest
import torch

from defectnas.exceptions import ConfigError, ShapeError
from defectnas.losses import LossBundle, bce_dice_loss, total_loss


def test_perfect_prediction_loss_components():
    pred = torch.ones(4, 4)
    target = torch.ones(4, 4)
    loss = bce_dice_loss(pred, target)
    # dice term: 1 - (2*16 + 1) / (16 + 16 + 1) = 0; BCE only clamp residue
    assert float(loss) <= 1e-6


def test_half_confidence_bce_is_ln2():
    pred = torch.full((5, 5), 0.5)
    target = torch.ones(5, 5)
    dice = 1.0 - (2 * 12.5 + 1.0) / (12.5 + 25.0 + 1.0)
    assert math.isclose(float(bce_dice_loss(pred, target)),
                        math.log(2.0) + dice, rel_tol=1e-6)


def test_empty_target_empty_prediction_dice_vanishes():
    pred = torch.zeros(4, 4)
    target = torch.zeros(4, 4)
    # dice: 1 - eps/eps = 0; BCE: -log(1 - 1e-7)
    assert float(bce_dice_loss(pred, target)) <= 1e-6


def test_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        bce_dice_loss(torch.zeros(4, 4), torch.zeros(4, 5))


def test_loss_positive_and_finite_on_random_inputs():
    torch.manual_seed(0)
    for _ in range(20):
        pred = torch.rand(8, 8).clamp(1e-6, 1 - 1e-6)
        target = (torch.rand(8, 8) > 0.5).float()
        value = float(bce_dice_loss(pred, target))
        assert math.isfinite(value) and value >= 0.0


def test_total_loss_composition_identity():
    torch.manual_seed(1)
    target = (torch.rand(1, 1, 8, 8) > 0.7).float()
    out = torch.rand(1, 1, 8, 8)
    branches = tuple(torch.rand(1, 1, 8, 8) for _ in range(5))
    bundle = total_loss(out, branches, target)
    assert isinstance(bundle, LossBundle)
    branch_sum = sum(float(b) for b in bundle.branch)
    assert math.isclose(float(bundle.loss_bra), branch_sum, abs_tol=1e-6)
    assert math.isclose(float(bundle.loss_total),
                        float(bundle.loss_out) + float(bundle.loss_bra),
                        abs_tol=1e-6)


def test_identical_predictions_scale_total():
    torch.manual_seed(2)
    target = (torch.rand(1, 1, 8, 8) > 0.7).float()
    pred = torch.rand(1, 1, 8, 8)
    bundle = total_loss(pred, tuple(pred.clone() for _ in range(5)), target)
    assert math.isclose(float(bundle.loss_total), 6 * float(bundle.loss_out),
                        rel_tol=1e-6)


def test_branch_arithmetic():
    ones = torch.ones(2, 2)
    # craft predictions whose bce_dice losses are known: use identical maps
    target = (torch.rand(2, 2) > 0.5).float()
    out = torch.rand(2, 2).clamp(0.2, 0.8)
    branches = tuple(torch.rand(2, 2).clamp(0.2, 0.8) for _ in range(5))
    bundle = total_loss(out, branches, target)
    assert float(bundle.loss_total) == pytest.approx(
        float(bundle.loss_out) + sum(float(b) for b in bundle.branch))
    del ones


def test_deep_supervision_switch():
    torch.manual_seed(3)
    target = (torch.rand(1, 1, 8, 8) > 0.7).float()
    out = torch.rand(1, 1, 8, 8)
    branches = tuple(torch.rand(1, 1, 8, 8) for _ in range(5))
    bundle = total_loss(out, branches, target, deep_supervision=False)
    assert bundle.branch == ()
    assert float(bundle.loss_bra) == 0.0
    assert float(bundle.loss_total) == float(bundle.loss_out)


def test_wrong_branch_count_is_configuration_error():
    target = torch.zeros(1, 1, 8, 8)
    out = torch.rand(1, 1, 8, 8)
    with pytest.raises(ConfigError):
        total_loss(out, tuple(torch.rand(1, 1, 8, 8) for _ in range(4)), target)
