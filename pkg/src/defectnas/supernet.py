"""Network assembly: stem, stacked cells, level taps, and output heads.

Layout: a stride-2 stem followed by strictly alternating normal/reduction
cells (N1 R1 N2 R2 ...). The working width doubles at every reduction cell.
Level taps produce the feature pyramid: level 1 is the first normal cell's
output, the remaining levels are the reduction cell outputs, so an input of
size S yields levels at S/2, S/4, ..., S/2^(n_reduction+1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .cell import NORMAL, REDUCTION, DiscreteCell, MixedCell
from .exceptions import ConfigError, GenotypeError, ShapeError
from .fusion import GATE_MODES, BranchHead, FusionHead
from .ops import OpSettings
from .rng import substream_seed


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 1
    stem_channels: int = 16
    n_normal: int = 4
    n_reduction: int = 4
    n_intermediate: int = 4
    input_size: tuple = (64, 64)
    channel_multiplier: int = 2
    fusion_channels: int = 32
    gate_mode: str = "per_level"
    adaptive_fusion: bool = True
    settings: OpSettings = field(default_factory=OpSettings)

    def validate(self):
        if self.in_channels not in (1, 3):
            raise ConfigError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.stem_channels < 1:
            raise ConfigError("stem_channels must be positive")
        if self.n_normal != self.n_reduction or self.n_normal < 1:
            raise ConfigError(
                "alternating layout needs n_normal == n_reduction >= 1, got "
                f"{self.n_normal}/{self.n_reduction}")
        if self.n_intermediate < 1:
            raise ConfigError("n_intermediate must be positive")
        if self.channel_multiplier < 1:
            raise ConfigError("channel_multiplier must be positive")
        if self.gate_mode not in GATE_MODES:
            raise ConfigError(f"unknown gate mode: {self.gate_mode!r}")
        divisor = 2 ** (self.n_reduction + 2)
        h, w = self.input_size
        if h % divisor or w % divisor:
            raise ConfigError(
                f"input size {h}x{w} must be divisible by {divisor} "
                f"for {self.n_reduction} reduction cells")

    @property
    def n_levels(self):
        return self.n_reduction + 1


@dataclass(frozen=True)
class FeaturePyramid:
    """Level features at scales 1/2, 1/4, ... of the input."""

    levels: tuple

    def __post_init__(self):
        for a, b in zip(self.levels, self.levels[1:]):
            ha, wa = a.shape[-2:]
            hb, wb = b.shape[-2:]
            if hb != math.ceil(ha / 2) or wb != math.ceil(wa / 2):
                raise ShapeError(
                    f"pyramid levels not halving: {ha}x{wa} -> {hb}x{wb}")

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)


@dataclass
class NetworkOutput:
    pyramid: FeaturePyramid
    prediction: torch.Tensor
    branches: tuple


class _NetworkBase(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        self.cfg = cfg

    def _build_stem(self):
        s = self.cfg.settings
        self.stem = nn.Sequential(
            nn.Conv2d(self.cfg.in_channels, self.cfg.stem_channels, 3,
                      stride=2, padding=1, bias=False),
            nn.BatchNorm2d(self.cfg.stem_channels, affine=s.affine,
                           track_running_stats=s.track_running_stats),
        )

    def _cell_plan(self):
        """Yield (index, cell_type, c_prev_prev, c_prev, channels, reduction_prev).

        The working width doubles after each reduction cell, so the cells
        between two reductions share one width.
        """
        c0 = self.cfg.stem_channels
        c_prev_prev, c_prev, c_curr = c0, c0, c0
        reduction_prev = False
        plan = []
        for k in range(self.cfg.n_normal + self.cfg.n_reduction):
            reduction = k % 2 == 1
            cell_type = REDUCTION if reduction else NORMAL
            plan.append((k, cell_type, c_prev_prev, c_prev, c_curr, reduction_prev))
            if reduction:
                c_curr *= self.cfg.channel_multiplier
            reduction_prev = reduction
            c_prev_prev, c_prev = c_prev, plan[-1][4] * self.cfg.n_intermediate
        return plan

    def _build_heads(self, level_channels):
        self.fusion = FusionHead(level_channels, self.cfg.fusion_channels,
                                 self.cfg.gate_mode, self.cfg.adaptive_fusion)
        self.branch_heads = nn.ModuleList(
            [BranchHead(ch, 2 ** (level + 1))
             for level, ch in enumerate(level_channels)])

    def _check_input(self, x):
        h, w = self.cfg.input_size
        if x.shape[1] != self.cfg.in_channels or x.shape[-2:] != (h, w):
            raise ShapeError(
                f"expected {self.cfg.in_channels}x{h}x{w} input, got "
                f"{tuple(x.shape[1:])}")

    def _run_cells(self, x, run_cell):
        s0 = s1 = self.stem(x)
        levels = []
        for idx, cell in enumerate(self.cells):
            s0, s1 = s1, run_cell(idx, cell, s0, s1)
            if idx in self.tap_indices:
                levels.append(s1)
        return levels

    def _finish(self, levels, squeeze):
        pyramid = FeaturePyramid(tuple(levels))
        prediction = self.fusion(levels)
        branches = tuple(head(f) for head, f in zip(self.branch_heads, levels))
        if squeeze:
            prediction = prediction.squeeze(0)
            branches = tuple(b.squeeze(0) for b in branches)
            pyramid = FeaturePyramid(tuple(f.squeeze(0) for f in levels))
        return NetworkOutput(pyramid, prediction, branches)

    @property
    def n_levels(self):
        return self.cfg.n_levels


class Supernet(_NetworkBase):
    """The over-parameterized search network with mixed cells."""

    def __init__(self, cfg, seed=0):
        super().__init__(cfg)
        with torch.random.fork_rng():
            torch.manual_seed(substream_seed(seed, "init", "supernet"))
            self._build_stem()
            self.cells = nn.ModuleList()
            self.tap_indices = set()
            level_channels = []
            for k, cell_type, c_pp, c_p, c, red_prev in self._cell_plan():
                cell = MixedCell(cfg.n_intermediate, c_pp, c_p, c, cell_type,
                                 red_prev, cfg.settings)
                self.cells.append(cell)
                if k == 0 or cell_type == REDUCTION:
                    self.tap_indices.add(k)
                    level_channels.append(cell.out_channels)
            self._build_heads(level_channels)

    def forward(self, x, arch):
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        self._check_input(x)

        def run_cell(idx, cell, s0, s1):
            ct = cell.cell_type
            return cell(s0, s1, lambda i, j: arch.sliced_logits(ct, i, j))

        return self._finish(self._run_cells(x, run_cell), squeeze)

    def sync_alive(self, arch):
        """Drop the op modules of every kind no longer alive in ``arch``."""
        for cell in self.cells:
            for i, j in arch.edge_list:
                cell.edges[f"{i}-{j}"].prune_to(
                    arch.alive_kinds(cell.cell_type, i, j))


class DiscreteNetwork(_NetworkBase):
    """The determined network built from a genotype."""

    def __init__(self, genotype, cfg, seed=0, _donor=None):
        super().__init__(cfg)
        if genotype.n_intermediate != cfg.n_intermediate:
            raise GenotypeError(
                f"genotype has {genotype.n_intermediate} intermediate nodes, "
                f"config expects {cfg.n_intermediate}")
        self.genotype = genotype
        with torch.random.fork_rng():
            torch.manual_seed(substream_seed(seed, "init", "network"))
            self._build_stem()
            self.cells = nn.ModuleList()
            self.tap_indices = set()
            level_channels = []
            for k, cell_type, c_pp, c_p, c, red_prev in self._cell_plan():
                pairs = genotype.reduction if cell_type == REDUCTION else genotype.normal
                if _donor is None:
                    cell = DiscreteCell(pairs, c_pp, c_p, c, cell_type,
                                        red_prev, cfg.settings)
                else:
                    cell = DiscreteCell.from_mixed(_donor.cells[k], pairs)
                self.cells.append(cell)
                if k == 0 or cell_type == REDUCTION:
                    self.tap_indices.add(k)
                    level_channels.append(cell.out_channels)
            if _donor is None:
                self._build_heads(level_channels)
            else:
                self.stem = _donor.stem
                self.fusion = _donor.fusion
                self.branch_heads = _donor.branch_heads

    def forward(self, x):
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        self._check_input(x)
        return self._finish(
            self._run_cells(x, lambda idx, cell, s0, s1: cell(s0, s1)), squeeze)


def build_supernet(cfg, seed=0):
    """Assemble the search supernet from a network configuration."""
    return Supernet(cfg, seed)


def build_discrete_network(genotype, cfg, seed=0):
    """Build the determined network with fresh parameter initialization."""
    return DiscreteNetwork(genotype, cfg, seed)


def discretize_supernet(supernet, genotype):
    """Build the determined network sharing the supernet's parameters."""
    return DiscreteNetwork(genotype, supernet.cfg, _donor=supernet)
