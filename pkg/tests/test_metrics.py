"""Metric oracles: confusion-matrix cross-check and algebraic identities."""

import numpy as np
import pytest
import torch

from conftest import random_mask_batch
from defectnas.exceptions import DataError, ShapeError
from defectnas.metrics import MetricsRecord, segmentation_metrics


def oracle_metrics(pred_bin, target):
    """Per-pixel confusion-matrix reference, nested loops on purpose."""
    ious, f1s, pas = [], [], []
    for p, t in zip(pred_bin, target):
        tp = fp = fn = tn = 0
        for r in range(p.shape[0]):
            for c in range(p.shape[1]):
                if p[r, c] and t[r, c]:
                    tp += 1
                elif p[r, c] and not t[r, c]:
                    fp += 1
                elif not p[r, c] and t[r, c]:
                    fn += 1
                else:
                    tn += 1
        if tp + fp + fn == 0:
            ious.append(1.0)
            f1s.append(1.0)
        else:
            ious.append(tp / (tp + fp + fn))
            f1s.append(2 * tp / (2 * tp + fp + fn))
        pas.append((tp + tn) / (tp + fp + fn + tn))
    return float(np.mean(ious)), float(np.mean(f1s)), float(np.mean(pas))


def test_perfect_prediction_scores_one():
    target = np.zeros((1, 4, 4))
    target[0, 1:3, 1:3] = 1
    record = segmentation_metrics(target, target)
    assert record.iou == 1.0 and record.f1 == 1.0 and record.pa == 1.0


def test_disjoint_masks_score_zero():
    a = np.zeros((1, 4, 4))
    b = np.zeros((1, 4, 4))
    a[0, :, :2] = 1
    b[0, :, 2:] = 1
    record = segmentation_metrics(a, b)
    assert record.iou == 0.0 and record.f1 == 0.0


def test_half_overlap_hand_counts():
    # target = left half, prediction = top half: TP=4 FP=4 FN=4 TN=4
    target = np.zeros((1, 4, 4))
    target[0, :, :2] = 1
    pred = np.zeros((1, 4, 4))
    pred[0, :2, :] = 1
    record = segmentation_metrics(pred, target)
    assert record.iou == pytest.approx(1 / 3)
    assert record.f1 == pytest.approx(0.5)
    assert record.pa == pytest.approx(0.5)


def test_empty_target_empty_prediction_scores_one():
    zeros = np.zeros((1, 8, 8))
    record = segmentation_metrics(zeros, zeros)
    assert record.iou == 1.0 and record.f1 == 1.0 and record.pa == 1.0


def test_non_binary_target_rejected():
    with pytest.raises(DataError):
        segmentation_metrics(np.zeros((1, 4, 4)), np.full((1, 4, 4), 0.3))


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        segmentation_metrics(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


def test_matches_confusion_oracle_on_random_masks():
    rng = np.random.default_rng(0)
    # 1000 random 8x8 mask pairs in batches to keep the oracle loop sane
    for batch in range(10):
        pred = random_mask_batch(rng, 100, 8, 8, p=0.4)
        target = random_mask_batch(rng, 100, 8, 8, p=0.3)
        record = segmentation_metrics(pred, target, threshold=0.5)
        iou, f1, pa = oracle_metrics(pred > 0.5, target > 0.5)
        assert record.iou == pytest.approx(iou, abs=1e-12)
        assert record.f1 == pytest.approx(f1, abs=1e-12)
        assert record.pa == pytest.approx(pa, abs=1e-12)


def test_f1_iou_identity_per_image():
    rng = np.random.default_rng(1)
    for _ in range(200):
        pred = random_mask_batch(rng, 1, 8, 8, p=0.4)
        target = random_mask_batch(rng, 1, 8, 8, p=0.3)
        record = segmentation_metrics(pred, target)
        assert abs(record.f1 - 2 * record.iou / (1 + record.iou)) <= 1e-9
        assert record.iou <= record.f1 + 1e-12


def test_accepts_torch_tensors_and_channel_dim():
    pred = torch.rand(3, 1, 8, 8)
    target = (torch.rand(3, 1, 8, 8) > 0.5).float()
    record = segmentation_metrics(pred, target)
    assert 0.0 <= record.iou <= 1.0


def test_record_round_trip():
    record = MetricsRecord(iou=0.5, f1=2 / 3, pa=0.75, params=10, flops=20)
    assert MetricsRecord.from_dict(record.to_dict()) == record
