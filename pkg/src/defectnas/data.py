"""Dataset ingestion and deterministic synthetic defect generation.

The synthetic generator stands in for proprietary industrial data: it
renders low-contrast scratches, blobs, and cracks over a procedurally
textured background with additive noise, together with exact pixel masks.
Generation is a pure function of the spec seed (one RNG substream per
image), so regenerated trees are byte-identical.

On-disk layout: ``<root>/<split>/{images,masks}/<stem>.png`` with matching
stems; images are 8-bit grayscale, masks are {0, 255}.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from .exceptions import DataError
from .fileio import write_gray_png, write_mask_png
from .rng import numpy_rng

DEFECT_KINDS = ("scratch", "blob", "crack")


@dataclass
class Sample:
    image: np.ndarray  # (H, W) or (H, W, 3), float in [0, 1]
    mask: np.ndarray   # (H, W), uint8 in {0, 1}
    id: str


@dataclass(frozen=True)
class SynthSpec:
    size: tuple = (64, 64)
    n_train: int = 200
    n_test: int = 50
    kinds: tuple = ("blob", "scratch")
    contrast: tuple = (0.1, 0.3)
    texture_scale: float = 6.0
    noise: float = 0.02
    seed: int = 0

    def validate(self):
        if self.n_train < 1 or self.n_test < 0:
            raise DataError("n_train must be >= 1 and n_test >= 0")
        for kind in self.kinds:
            if kind not in DEFECT_KINDS:
                raise DataError(f"unknown defect kind: {kind!r}")
        lo, hi = self.contrast
        if not (0.0 < lo <= hi <= 1.0):
            raise DataError(f"contrast range must satisfy 0 < lo <= hi <= 1: {self.contrast}")
        if min(self.size) < 16:
            raise DataError(f"image size too small: {self.size}")


def _segment_mask(h, w, p0, p1, thickness):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    d = np.array(p1) - np.array(p0)
    length_sq = max(float(d @ d), 1e-9)
    t = ((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / length_sq
    t = np.clip(t, 0.0, 1.0)
    dist = np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))
    return dist <= thickness / 2.0


def _ellipse_mask(h, w, center, radii, angle):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy -= center[0]
    xx -= center[1]
    ca, sa = np.cos(angle), np.sin(angle)
    u = ca * xx + sa * yy
    v = -sa * xx + ca * yy
    return (u / radii[1]) ** 2 + (v / radii[0]) ** 2 <= 1.0


def _defect_mask(kind, h, w, rng):
    mask = np.zeros((h, w), dtype=bool)
    if kind == "blob":
        for _ in range(int(rng.integers(1, 3))):
            center = rng.uniform([h * 0.2, w * 0.2], [h * 0.8, w * 0.8])
            radii = rng.uniform(h * 0.06, h * 0.2, size=2)
            mask |= _ellipse_mask(h, w, center, radii, rng.uniform(0, np.pi))
    elif kind == "scratch":
        p0 = rng.uniform([h * 0.1, w * 0.1], [h * 0.9, w * 0.9])
        angle = rng.uniform(0, 2 * np.pi)
        length = rng.uniform(0.4, 0.8) * min(h, w)
        p1 = p0 + length * np.array([np.sin(angle), np.cos(angle)])
        p1 = np.clip(p1, [0, 0], [h - 1, w - 1])
        mask |= _segment_mask(h, w, p0, p1, rng.uniform(1.5, 3.5))
    elif kind == "crack":
        point = rng.uniform([h * 0.2, w * 0.2], [h * 0.8, w * 0.8])
        heading = rng.uniform(0, 2 * np.pi)
        thickness = rng.uniform(1.2, 2.5)
        for _ in range(int(rng.integers(5, 10))):
            heading += rng.uniform(-0.7, 0.7)
            step = rng.uniform(0.05, 0.12) * min(h, w)
            nxt = point + step * np.array([np.sin(heading), np.cos(heading)])
            nxt = np.clip(nxt, [0, 0], [h - 1, w - 1])
            mask |= _segment_mask(h, w, point, nxt, thickness)
            point = nxt
    if not mask.any():
        cy, cx = int(rng.uniform(h * 0.3, h * 0.7)), int(rng.uniform(w * 0.3, w * 0.7))
        mask[max(cy - 1, 0):cy + 2, max(cx - 1, 0):cx + 2] = True
    return mask


def _render_sample(spec, rng):
    h, w = spec.size
    base = rng.uniform(0.35, 0.55)
    texture = gaussian_filter(rng.standard_normal((h, w)), spec.texture_scale / 3.0)
    texture *= 0.03 / max(float(texture.std()), 1e-8)
    background = np.clip(base + texture, 0.05, 0.95)

    kind = str(rng.choice(list(spec.kinds)))
    mask = _defect_mask(kind, h, w, rng)
    contrast = rng.uniform(*spec.contrast)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    if base + sign * contrast > 0.95 or base + sign * contrast < 0.05:
        sign = -sign

    image = background.copy()
    image[mask] = background[mask] + sign * contrast
    image = image + rng.normal(0.0, spec.noise, size=(h, w))
    return np.clip(image, 0.0, 1.0), mask.astype(np.uint8), kind


def generate_synthetic_dataset(spec, root):
    """Write train/ and test/ image+mask trees; deterministic per spec seed."""
    spec.validate()
    root = Path(root)
    for split, count in (("train", spec.n_train), ("test", spec.n_test)):
        for index in range(count):
            rng = numpy_rng(spec.seed, "data", split, index)
            image, mask, kind = _render_sample(spec, rng)
            stem = f"{split}_{index:05d}_{kind}"
            write_gray_png(root / split / "images" / f"{stem}.png", image)
            write_mask_png(root / split / "masks" / f"{stem}.png", mask)
    return root


def load_dataset(root, split=None, size=None, channels=1):
    """Load image/mask pairs in deterministic lexicographic stem order."""
    base = Path(root)
    folder = base / split if split else base
    if not folder.is_dir():
        raise DataError(f"dataset folder not found: {folder}")
    images_dir = folder / "images"
    masks_dir = folder / "masks"
    if not images_dir.is_dir() or not masks_dir.is_dir():
        raise DataError(f"expected images/ and masks/ under {folder}")
    image_files = {p.stem: p for p in images_dir.iterdir() if p.is_file()}
    mask_files = {p.stem: p for p in masks_dir.iterdir() if p.is_file()}
    if not image_files:
        raise DataError(f"no images found under {images_dir}")
    for stem in sorted(image_files):
        if stem not in mask_files:
            raise DataError(f"image {image_files[stem].name} has no matching mask")
    for stem in sorted(mask_files):
        if stem not in image_files:
            raise DataError(f"mask {mask_files[stem].name} has no matching image")

    samples = []
    for stem in sorted(image_files):
        image = Image.open(image_files[stem])
        image = image.convert("L" if channels == 1 else "RGB")
        mask = Image.open(mask_files[stem]).convert("L")
        if size is not None:
            image = image.resize((size[1], size[0]), Image.BILINEAR)
            mask = mask.resize((size[1], size[0]), Image.NEAREST)
        image_arr = np.asarray(image, dtype=np.float32) / 255.0
        mask_arr = (np.asarray(mask, dtype=np.float32) >= 127.5).astype(np.uint8)
        samples.append(Sample(image=image_arr, mask=mask_arr, id=stem))
    return samples


def samples_to_tensors(samples):
    """Stack samples into (N, C, H, W) image and (N, 1, H, W) mask tensors."""
    if not samples:
        raise DataError("empty sample list")
    images = []
    for s in samples:
        arr = s.image
        if arr.ndim == 2:
            arr = arr[None]
        else:
            arr = arr.transpose(2, 0, 1)
        images.append(torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)))
    masks = [torch.from_numpy(s.mask.astype(np.float32))[None] for s in samples]
    return torch.stack(images), torch.stack(masks)
