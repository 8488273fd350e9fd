"""Segmentation loss and its deep-supervision composition.

The loss is binary cross-entropy plus a smoothed dice complement at equal
weight. Deep supervision adds one branch loss per pyramid level; the total
training loss is the output loss plus the branch sum.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import torch

from .exceptions import ConfigError, ShapeError

CLAMP_EPS = 1e-7


def debug_checks_enabled():
    """Per-step loss invariant checks, enabled via DEFECTNAS_DEBUG=1."""
    return os.environ.get("DEFECTNAS_DEBUG", "") not in ("", "0")


def verify_bundle(bundle, tol=1e-6):
    """Assert the bundle composition identity (debug-flag training check)."""
    branch_sum = sum(float(b.detach()) for b in bundle.branch)
    assert abs(float(bundle.loss_bra.detach()) - branch_sum) <= tol, \
        "branch losses do not sum to loss_bra"
    assert abs(float(bundle.loss_total.detach())
               - (float(bundle.loss_out.detach())
                  + float(bundle.loss_bra.detach()))) <= tol, \
        "loss_total is not loss_out + loss_bra"


@dataclass
class LossBundle:
    loss_out: torch.Tensor
    branch: tuple
    loss_bra: torch.Tensor
    loss_total: torch.Tensor


def bce_dice_loss(pred, target, dice_eps=1.0):
    """Mean BCE plus the smoothed dice complement, both on probabilities."""
    if pred.shape != target.shape:
        raise ShapeError(
            f"prediction shape {tuple(pred.shape)} does not match target "
            f"{tuple(target.shape)}")
    p = pred.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
    bce = -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()
    intersection = (pred * target).sum()
    dice = 1.0 - (2.0 * intersection + dice_eps) / (
        pred.sum() + target.sum() + dice_eps)
    return bce + dice


def total_loss(out_pred, branch_preds, target, n_branches=5, dice_eps=1.0,
               deep_supervision=True):
    """Compose the output loss with one branch loss per supervised level."""
    if len(branch_preds) != n_branches:
        raise ConfigError(
            f"expected {n_branches} branch predictions, got {len(branch_preds)}")
    loss_out = bce_dice_loss(out_pred, target, dice_eps)
    if deep_supervision:
        branch = tuple(bce_dice_loss(bp, target, dice_eps) for bp in branch_preds)
        loss_bra = branch[0]
        for term in branch[1:]:
            loss_bra = loss_bra + term
    else:
        branch = ()
        loss_bra = torch.zeros_like(loss_out)
    return LossBundle(loss_out, branch, loss_bra, loss_out + loss_bra)
