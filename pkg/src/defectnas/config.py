"""Flat key=value run configuration with a typed schema and a digest.

A config file holds one ``key = value`` assignment per line; ``#`` starts a
comment. Unknown keys are rejected loudly. The digest covers exactly the
keys that determine the network architecture and is embedded in genotypes
and checkpoints so mismatched retraining fails early instead of silently
building a different network.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .exceptions import ConfigError, ScheduleError
from .ops import ALL_KINDS, OpSettings
from .supernet import NetworkConfig


def _parse_bool(text):
    value = text.strip().lower()
    if value in ("true", "1", "yes", "on"):
        return True
    if value in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_schedule(text):
    try:
        return tuple(int(part) for part in str(text).split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


@dataclass(frozen=True)
class Config:
    image_size: int = 64
    in_channels: int = 1
    stem_channels: int = 16
    n_normal: int = 4
    n_reduction: int = 4
    n_intermediate: int = 4
    channel_multiplier: int = 2
    fusion_channels: int = 32
    gate_mode: str = "per_level"
    adaptive_fusion: bool = True
    deep_supervision: bool = True
    double_sep_conv: bool = False
    pool_norm: bool = True
    attention_ratio: int = 4
    spatial_kernel: int = 7
    schedule: tuple = (7, 4, 2, 1)
    epochs_per_stage: int = 70
    warmup_epochs: int = 20
    batch_size: int = 4
    arch_split: float = 0.6
    arch_lr: float = 0.002
    arch_weight_decay: float = 0.001
    weight_lr: float = 0.005
    weight_momentum: float = 0.9
    weight_decay: float = 0.0001
    retrain_epochs: int = 500
    threshold: float = 0.5
    dice_eps: float = 1.0


# key -> (parser, help text); renders both --help epilogs and default files
SCHEMA = {
    "image_size": (int, "square working resolution; inputs are resized to it"),
    "in_channels": (int, "input channels, 1 (grayscale) or 3 (RGB)"),
    "stem_channels": (int, "stem output width; cell widths scale from it"),
    "n_normal": (int, "number of normal cells (must equal n_reduction)"),
    "n_reduction": (int, "number of reduction cells"),
    "n_intermediate": (int, "intermediate nodes per cell"),
    "channel_multiplier": (int, "width multiplier applied at each reduction cell"),
    "fusion_channels": (int, "common width the pyramid levels are projected to"),
    "gate_mode": (str, "fusion gate granularity: per_level or per_channel"),
    "adaptive_fusion": (_parse_bool, "learn fusion gates; off freezes them at 1"),
    "deep_supervision": (_parse_bool, "add per-level branch losses to the total"),
    "double_sep_conv": (_parse_bool, "apply separable convolutions twice"),
    "pool_norm": (_parse_bool, "normalize pooling outputs"),
    "attention_ratio": (int, "channel-attention bottleneck ratio"),
    "spatial_kernel": (int, "spatial-attention convolution kernel size"),
    "schedule": (_parse_schedule, "alive ops kept after each stage, e.g. 7,4,2,1"),
    "epochs_per_stage": (int, "training epochs per search stage"),
    "warmup_epochs": (int, "weight-only epochs at the start of each stage"),
    "batch_size": (int, "batch size for search and retraining"),
    "arch_split": (float, "fraction of the training set used for alpha updates"),
    "arch_lr": (float, "Adam learning rate for architecture weights"),
    "arch_weight_decay": (float, "Adam weight decay for architecture weights"),
    "weight_lr": (float, "SGD learning rate for network weights"),
    "weight_momentum": (float, "SGD momentum for network weights"),
    "weight_decay": (float, "SGD weight decay for network weights"),
    "retrain_epochs": (int, "default epochs for retraining the decoded network"),
    "threshold": (float, "probability threshold for binarizing predictions"),
    "dice_eps": (float, "dice smoothing constant"),
}

_ARCH_DIGEST_KEYS = (
    "image_size", "in_channels", "stem_channels", "n_normal", "n_reduction",
    "n_intermediate", "channel_multiplier", "fusion_channels", "gate_mode",
    "double_sep_conv", "pool_norm", "attention_ratio", "spatial_kernel",
)


def validate_config(cfg):
    if cfg.gate_mode not in ("per_level", "per_channel"):
        raise ConfigError(f"unknown gate_mode: {cfg.gate_mode!r}")
    if not 0.0 < cfg.arch_split < 1.0:
        raise ConfigError(f"arch_split must lie in (0, 1), got {cfg.arch_split}")
    if cfg.batch_size < 1 or cfg.epochs_per_stage < 1:
        raise ConfigError("batch_size and epochs_per_stage must be positive")
    if cfg.warmup_epochs < 0 or cfg.warmup_epochs > cfg.epochs_per_stage:
        raise ConfigError("warmup_epochs must lie in [0, epochs_per_stage]")
    validate_schedule(cfg.schedule)
    return cfg


def validate_schedule(schedule):
    if not schedule:
        raise ScheduleError("schedule is empty")
    if any(k < 1 for k in schedule):
        raise ScheduleError(f"schedule entries must be >= 1: {schedule}")
    if schedule[0] > len(ALL_KINDS):
        raise ScheduleError(
            f"schedule starts above the {len(ALL_KINDS)}-op candidate set: {schedule}")
    if any(a <= b for a, b in zip(schedule, schedule[1:])):
        raise ScheduleError(f"schedule must be strictly decreasing: {schedule}")
    if schedule[-1] != 1:
        raise ScheduleError(f"schedule must end at 1: {schedule}")


def loads_config(text, base=None):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value.strip())
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError(
                f"line {lineno}: bad value for {key}: {value.strip()!r}") from None
    cfg = replace(base or Config(), **values)
    return validate_config(cfg)


def load_config(path):
    return loads_config(Path(path).read_text())


def dumps_config(cfg):
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def schema_text():
    lines = ["config keys (key = value per line, # comments):"]
    defaults = Config()
    for key, (_, help_text) in SCHEMA.items():
        value = getattr(defaults, key)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"  {key:<20} {help_text} (default: {value})")
    return "\n".join(lines)


def config_digest(cfg):
    """Digest of the architecture-determining config keys."""
    text = "\n".join(f"{k}={getattr(cfg, k)}" for k in _ARCH_DIGEST_KEYS)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def network_config(cfg, role="search"):
    """Derive the network-construction config for a search or retrain network."""
    if role not in ("search", "discrete"):
        raise ConfigError(f"unknown network role: {role!r}")
    retrain = role == "discrete"
    settings = OpSettings(
        affine=retrain,
        track_running_stats=retrain,
        double_sep_conv=cfg.double_sep_conv,
        pool_norm=cfg.pool_norm,
        attention_ratio=cfg.attention_ratio,
        spatial_kernel=cfg.spatial_kernel,
    )
    return NetworkConfig(
        in_channels=cfg.in_channels,
        stem_channels=cfg.stem_channels,
        n_normal=cfg.n_normal,
        n_reduction=cfg.n_reduction,
        n_intermediate=cfg.n_intermediate,
        input_size=(cfg.image_size, cfg.image_size),
        channel_multiplier=cfg.channel_multiplier,
        fusion_channels=cfg.fusion_channels,
        gate_mode=cfg.gate_mode,
        adaptive_fusion=cfg.adaptive_fusion,
        settings=settings,
    )
