"""Pixel-level segmentation metrics.

Metrics are computed per image from the confusion counts and averaged over
the dataset. An image whose target and binarized prediction are both empty
scores 1.0 on IoU, F1, and PA, keeping the averages total.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from .exceptions import DataError, ShapeError


@dataclass
class MetricsRecord:
    iou: float
    f1: float
    pa: float
    params: int = 0
    flops: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return cls(iou=float(doc["iou"]), f1=float(doc["f1"]), pa=float(doc["pa"]),
                   params=int(doc.get("params", 0)), flops=int(doc.get("flops", 0)))


def _as_image_stack(x):
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim == 4:
        if x.shape[1] != 1:
            raise ShapeError(f"expected single-channel maps, got {x.shape[1]} channels")
        x = x[:, 0]
    if x.ndim != 3:
        raise ShapeError(f"expected (N, H, W) maps, got shape {x.shape}")
    return x


def segmentation_metrics(pred, target, threshold=0.5):
    """IoU, F1, and pixel accuracy of thresholded predictions, per-image mean."""
    pred = _as_image_stack(pred)
    target = _as_image_stack(target)
    if pred.shape != target.shape:
        raise ShapeError(
            f"prediction shape {pred.shape} does not match target {target.shape}")
    if not np.all((target == 0.0) | (target == 1.0)):
        raise DataError("target masks must be binary")
    pred_bin = pred > threshold
    target_bin = target > 0.5
    ious, f1s, pas = [], [], []
    for p, t in zip(pred_bin, target_bin):
        tp = np.count_nonzero(p & t)
        fp = np.count_nonzero(p & ~t)
        fn = np.count_nonzero(~p & t)
        tn = p.size - tp - fp - fn
        if tp + fp + fn == 0:
            ious.append(1.0)
            f1s.append(1.0)
        else:
            ious.append(tp / (tp + fp + fn))
            f1s.append(2 * tp / (2 * tp + fp + fn))
        pas.append((tp + tn) / p.size)
    return MetricsRecord(iou=float(np.mean(ious)), f1=float(np.mean(f1s)),
                         pa=float(np.mean(pas)))
