"""Seed handling: one run seed fans out into named, independent substreams.

Every source of randomness in the toolkit (parameter init, dropout masks,
data order, dummy-source lengths, corpus synthesis) pulls from its own
substream so that changing how often one consumer draws never perturbs the
others. Substreams are derived from (seed, stream name) only, so they are
stable across platforms and process boundaries.
"""

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named substream of a run seed."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + words))
