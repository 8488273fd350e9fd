"""Adaptive multi-scale fusion head and deep-supervision branch heads.

The head aligns all pyramid levels to the finest scale, concatenates them,
derives per-level (or per-channel) importance gates from the pooled map, and
predicts a full-resolution segmentation map from the gated features.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .exceptions import ConfigError, ShapeError

GATE_MODES = ("per_level", "per_channel")


@dataclass
class FusionState:
    """Intermediate products of one fusion forward, for inspection."""

    aligned: tuple
    fused: torch.Tensor
    gates: torch.Tensor | None
    enhanced: torch.Tensor
    prediction: torch.Tensor


class FusionHead(nn.Module):
    def __init__(self, level_channels, width=32, gate_mode="per_level",
                 adaptive=True):
        super().__init__()
        if gate_mode not in GATE_MODES:
            raise ConfigError(f"unknown gate mode: {gate_mode!r}")
        self.n_levels = len(level_channels)
        self.width = width
        self.gate_mode = gate_mode
        self.adaptive = adaptive
        self.project = nn.ModuleList(
            [nn.Conv2d(ch, width, 1) for ch in level_channels])
        self.upsample = nn.ModuleList(
            [nn.Identity() if i == 0 else
             nn.Upsample(scale_factor=2 ** i, mode="bilinear", align_corners=False)
             for i in range(self.n_levels)])
        fused_width = self.n_levels * width
        gate_dim = self.n_levels if gate_mode == "per_level" else fused_width
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.encode = nn.Linear(fused_width, gate_dim)
        # start as a near pass-through gate: constant, close to 1, no
        # per-image wiggle until the encoder picks up signal
        with torch.no_grad():
            self.encode.weight.zero_()
            self.encode.bias.fill_(4.0)
        self.relu = nn.ReLU(inplace=False)
        self.gate = nn.Sigmoid()
        self.predict = nn.Conv2d(fused_width, 1, 1)
        self.out_act = nn.Sigmoid()
        self.out_up = nn.Upsample(scale_factor=2, mode="bilinear",
                                  align_corners=False)

    def align_levels(self, levels):
        """Project each level to the common width and resize to level-1 scale."""
        if len(levels) != self.n_levels:
            raise ShapeError(
                f"expected {self.n_levels} pyramid levels, got {len(levels)}")
        return [up(proj(f)) for proj, up, f in
                zip(self.project, self.upsample, levels)]

    def fuse_concat(self, aligned):
        shape = aligned[0].shape
        for m in aligned[1:]:
            if m.shape != shape:
                raise ShapeError(
                    f"aligned level shapes differ: {tuple(shape)} vs {tuple(m.shape)}")
        return torch.cat(aligned, dim=1)

    def compute_gates(self, fused):
        """Importance gates in (0, 1) from the spatially pooled fusion map."""
        pooled = self.pool(fused).flatten(1)
        encoded = self.relu(self.encode(pooled))
        return self.gate(encoded)

    def enhance(self, fused, gates):
        """Scale the fusion map by its gates (per level block or per channel)."""
        b, c, h, w = fused.shape
        if self.gate_mode == "per_level":
            if gates.shape[-1] != self.n_levels:
                raise ShapeError(
                    f"expected {self.n_levels} gates, got {gates.shape[-1]}")
            blocks = fused.reshape(b, self.n_levels, self.width, h, w)
            return (blocks * gates.reshape(b, self.n_levels, 1, 1, 1)).reshape(
                b, c, h, w)
        if gates.shape[-1] != c:
            raise ShapeError(f"expected {c} gates, got {gates.shape[-1]}")
        return fused * gates.reshape(b, c, 1, 1)

    def predict_map(self, enhanced):
        return self.out_up(self.out_act(self.predict(enhanced)))

    def forward(self, levels):
        aligned = self.align_levels(levels)
        fused = self.fuse_concat(aligned)
        if self.adaptive:
            enhanced = self.enhance(fused, self.compute_gates(fused))
        else:
            enhanced = fused
        return self.predict_map(enhanced)

    def forward_state(self, levels):
        """Like forward, but returns every intermediate product."""
        aligned = self.align_levels(levels)
        fused = self.fuse_concat(aligned)
        gates = self.compute_gates(fused) if self.adaptive else None
        enhanced = self.enhance(fused, gates) if self.adaptive else fused
        return FusionState(tuple(aligned), fused, gates, enhanced,
                           self.predict_map(enhanced))


class BranchHead(nn.Module):
    """Deep-supervision head: one pyramid level to a full-resolution map."""

    def __init__(self, channels, scale):
        super().__init__()
        self.project = nn.Conv2d(channels, 1, 1)
        self.act = nn.Sigmoid()
        self.up = nn.Upsample(scale_factor=scale, mode="bilinear",
                              align_corners=False)

    def forward(self, x):
        return self.up(self.act(self.project(x)))
