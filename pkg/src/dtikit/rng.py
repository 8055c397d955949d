"""Seeded random streams.

Every stochastic step in the pipeline (splitting, parameter init, batch
shuffling, episode sampling, synthetic data) draws from its own named
substream of a single run seed. Streams are independent, so adding or
removing a consumer of one stream never perturbs the others. Stream
derivation is pure arithmetic on a sha256 digest, stable across
platforms and processes.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a generator for the named substream of ``seed``."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, key]))
