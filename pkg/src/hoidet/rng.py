"""Deterministic RNG derivation.

Every stochastic draw in the package comes from a generator derived from
(root seed, purpose tags).  Stateless derivation keeps runs reproducible
and makes resume-from-checkpoint exact without serializing RNG state.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_rng(seed: int, *tags: int | str) -> np.random.Generator:
    """Generator deterministically derived from a root seed and tags."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            entropy.append(zlib.crc32(tag.encode("utf-8")))
        else:
            entropy.append(int(tag) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))
