"""Seed derivation: one master seed fans out into named substreams.

Every consumer of randomness (data generation, parameter init, batch order)
derives its own child seed from the master seed plus a name chain, so adding
or reordering one consumer never perturbs the others.
"""

import hashlib

import numpy as np


def substream_seed(seed, *names):
    """Derive a stable 63-bit child seed from a master seed and a name chain."""
    tag = ":".join(str(n) for n in names)
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def numpy_rng(seed, *names):
    return np.random.default_rng(substream_seed(seed, *names))
