"""The searchable candidate operation set.

Every operation preserves the channel count and either preserves the spatial
size (stride 1) or halves it with ceiling semantics (stride 2). Spatially
neutral ops (Identity and both attentions) are composed with a factorized
reduce on stride-2 edges so the spatial contract holds everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ConfigError, ShapeError


class OpKind(Enum):
    """The operation vocabulary, in canonical table order."""

    ZERO = (1, "Zero")
    IDENTITY = (2, "Identity")
    SEP_CONV_3 = (3, "Sep_conv_3x3")
    SEP_CONV_5 = (4, "Sep_conv_5x5")
    SEP_CONV_7 = (5, "Sep_conv_7x7")
    DIL_CONV_3 = (6, "Dil_conv_3x3")
    DIL_CONV_5 = (7, "Dil_conv_5x5")
    MAX_POOL_3 = (8, "Max_pool_3x3")
    AVG_POOL_3 = (9, "Avg_pool_3x3")
    CHANNEL_ATT = (10, "Channel_att")
    SPATIAL_ATT = (11, "Spatial_att")

    @property
    def id(self):
        return self.value[0]

    @property
    def op_name(self):
        return self.value[1]

    @classmethod
    def from_name(cls, name):
        for kind in cls:
            if kind.op_name == name:
                return kind
        raise ConfigError(f"unknown operation name: {name!r}")

    @classmethod
    def from_id(cls, op_id):
        for kind in cls:
            if kind.id == op_id:
                return kind
        raise ConfigError(f"unknown operation id: {op_id}")


ALL_KINDS = tuple(OpKind)


@dataclass(frozen=True)
class OpSettings:
    """Construction-time options shared by all candidate operations.

    Normalization layers never track running statistics while searching
    (batch statistics only), because the effective network changes with the
    architecture weights every step; retraining networks re-enable them.
    """

    affine: bool = True
    track_running_stats: bool = False
    double_sep_conv: bool = False
    pool_norm: bool = True
    attention_ratio: int = 4
    spatial_kernel: int = 7


def _norm(channels, settings):
    return nn.BatchNorm2d(channels, affine=settings.affine,
                          track_running_stats=settings.track_running_stats)


class ZeroOp(nn.Module):
    """Emits zeros of the contracted output shape; input gradient is exactly zero."""

    def __init__(self, stride):
        super().__init__()
        self.stride = stride

    def forward(self, x):
        if self.stride == 1:
            return x.mul(0.0)
        return x[:, :, :: self.stride, :: self.stride].mul(0.0)


class FactorizedReduce(nn.Module):
    """Halve the spatial size without dropping information.

    Two parallel stride-2 pointwise convolutions sample complementary pixel
    offsets; their channel concatenation is re-projected to the target width.
    The offset branch is padded so odd inputs still halve with ceil semantics.
    """

    def __init__(self, c_in, c_out, settings):
        super().__init__()
        self.conv_a = nn.Conv2d(c_in, c_out, 1, stride=2, bias=False)
        self.conv_b = nn.Conv2d(c_in, c_out, 1, stride=2, bias=False)
        self.project = nn.Conv2d(2 * c_out, c_out, 1, bias=False)
        self.norm = _norm(c_out, settings)

    def forward(self, x):
        shifted = F.pad(x, (0, 1, 0, 1))[:, :, 1:, 1:]
        out = torch.cat([self.conv_a(x), self.conv_b(shifted)], dim=1)
        return self.norm(self.project(out))


class SepConv(nn.Module):
    """Pre-activated depthwise separable convolution.

    Applied once by default; the doubled application used by some search
    spaces is available through ``double_sep_conv``.
    """

    def __init__(self, channels, kernel, stride, settings):
        super().__init__()
        pad = kernel // 2
        layers = [
            nn.ReLU(inplace=False),
            nn.Conv2d(channels, channels, kernel, stride=stride, padding=pad,
                      groups=channels, bias=False),
            nn.Conv2d(channels, channels, 1, bias=False),
            _norm(channels, settings),
        ]
        if settings.double_sep_conv:
            layers += [
                nn.ReLU(inplace=False),
                nn.Conv2d(channels, channels, kernel, stride=1, padding=pad,
                          groups=channels, bias=False),
                nn.Conv2d(channels, channels, 1, bias=False),
                _norm(channels, settings),
            ]
        self.op = nn.Sequential(*layers)

    def forward(self, x):
        return self.op(x)


class DilConv(nn.Module):
    """Pre-activated dilated depthwise separable convolution (dilation 2)."""

    def __init__(self, channels, kernel, stride, settings, dilation=2):
        super().__init__()
        pad = dilation * (kernel - 1) // 2
        self.op = nn.Sequential(
            nn.ReLU(inplace=False),
            nn.Conv2d(channels, channels, kernel, stride=stride, padding=pad,
                      dilation=dilation, groups=channels, bias=False),
            nn.Conv2d(channels, channels, 1, bias=False),
            _norm(channels, settings),
        )

    def forward(self, x):
        return self.op(x)


class PoolBlock(nn.Module):
    """3x3 pooling, optionally followed by normalization for search stability."""

    def __init__(self, mode, channels, stride, settings):
        super().__init__()
        if mode == "max":
            pool = nn.MaxPool2d(3, stride=stride, padding=1)
        else:
            pool = nn.AvgPool2d(3, stride=stride, padding=1, count_include_pad=False)
        if settings.pool_norm:
            self.op = nn.Sequential(pool, _norm(channels, settings))
        else:
            self.op = pool

    def forward(self, x):
        return self.op(x)


class ChannelAttention(nn.Module):
    """Squeeze-excitation gate: per-channel scales from globally pooled stats."""

    def __init__(self, channels, ratio):
        super().__init__()
        hidden = max(1, channels // ratio)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc1 = nn.Linear(channels, hidden, bias=False)
        self.relu = nn.ReLU(inplace=False)
        self.fc2 = nn.Linear(hidden, channels, bias=False)
        self.gate = nn.Sigmoid()

    def forward(self, x):
        b, c = x.shape[:2]
        v = self.pool(x).reshape(b, c)
        g = self.gate(self.fc2(self.relu(self.fc1(v)))).reshape(b, c, 1, 1)
        return x * g


class SpatialAttention(nn.Module):
    """Pixel-wise gate from channel-mean and channel-max summary maps."""

    def __init__(self, kernel):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel, padding=kernel // 2, bias=False)
        self.gate = nn.Sigmoid()

    def forward(self, x):
        summary = torch.cat(
            [x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return x * self.gate(self.conv(summary))


class CandidateOp(nn.Module):
    """One operation instantiated at a fixed width and stride."""

    def __init__(self, kind, channels, stride, body):
        super().__init__()
        self.kind = kind
        self.channels = channels
        self.stride = stride
        self.body = body

    def forward(self, x):
        if x.dim() != 4:
            raise ShapeError(f"expected NCHW input, got shape {tuple(x.shape)}")
        if x.shape[1] != self.channels:
            raise ShapeError(
                f"{self.kind.op_name} expects {self.channels} channels, "
                f"got {x.shape[1]}")
        return self.body(x)

    def extra_repr(self):
        return f"kind={self.kind.op_name}, channels={self.channels}, stride={self.stride}"


def _build_body(kind, channels, stride, settings):
    if kind is OpKind.ZERO:
        return ZeroOp(stride)
    if kind is OpKind.IDENTITY:
        if stride == 1:
            return nn.Identity()
        return FactorizedReduce(channels, channels, settings)
    if kind is OpKind.SEP_CONV_3:
        return SepConv(channels, 3, stride, settings)
    if kind is OpKind.SEP_CONV_5:
        return SepConv(channels, 5, stride, settings)
    if kind is OpKind.SEP_CONV_7:
        return SepConv(channels, 7, stride, settings)
    if kind is OpKind.DIL_CONV_3:
        return DilConv(channels, 3, stride, settings)
    if kind is OpKind.DIL_CONV_5:
        return DilConv(channels, 5, stride, settings)
    if kind is OpKind.MAX_POOL_3:
        return PoolBlock("max", channels, stride, settings)
    if kind is OpKind.AVG_POOL_3:
        return PoolBlock("avg", channels, stride, settings)
    if kind is OpKind.CHANNEL_ATT:
        att = ChannelAttention(channels, settings.attention_ratio)
        if stride == 1:
            return att
        return nn.Sequential(att, FactorizedReduce(channels, channels, settings))
    if kind is OpKind.SPATIAL_ATT:
        att = SpatialAttention(settings.spatial_kernel)
        if stride == 1:
            return att
        return nn.Sequential(att, FactorizedReduce(channels, channels, settings))
    raise ConfigError(f"unknown operation kind: {kind!r}")


def make_candidate(kind, channels, stride, seed=None, settings=None):
    """Build an initialized candidate op; init is deterministic when seeded."""
    if not isinstance(kind, OpKind):
        raise ConfigError(f"unknown operation kind: {kind!r}")
    if not isinstance(channels, int) or channels < 1:
        raise ConfigError(f"channels must be a positive integer, got {channels!r}")
    if stride not in (1, 2):
        raise ConfigError(f"stride must be 1 or 2, got {stride!r}")
    if settings is None:
        settings = OpSettings()
    if seed is None:
        body = _build_body(kind, channels, stride, settings)
    else:
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            body = _build_body(kind, channels, stride, settings)
    return CandidateOp(kind, channels, stride, body)


def apply_candidate(op, x):
    """Apply a candidate op to a feature map, enforcing its channel contract."""
    return op(x)
