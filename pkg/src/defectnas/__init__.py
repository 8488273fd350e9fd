"""Architecture search for compact pixel-level defect segmentation networks."""

from .arch import ArchWeights, decode_genotype, prune_edges
from .config import Config, config_digest, load_config, network_config
from .genotype import Genotype, parse_genotype, serialize_genotype
from .ops import OpKind, OpSettings, apply_candidate, make_candidate
from .search import run_search
from .supernet import (NetworkConfig, build_discrete_network, build_supernet,
                       discretize_supernet)
from .train import retrain

__version__ = "0.1.0"

__all__ = [
    "ArchWeights", "Config", "Genotype", "NetworkConfig", "OpKind",
    "OpSettings", "apply_candidate", "build_discrete_network",
    "build_supernet", "config_digest", "decode_genotype",
    "discretize_supernet", "load_config", "make_candidate", "network_config",
    "parse_genotype", "prune_edges", "retrain", "run_search",
    "serialize_genotype",
]
