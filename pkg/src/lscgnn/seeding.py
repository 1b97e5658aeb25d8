"""Deterministic RNG stream derivation.

Every random choice in the pipeline draws from a stream derived from
(master seed, purpose path), so independent stages never share state and
any single stage can be reproduced in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *path) -> int:
    """64-bit seed from a master seed and a purpose path, via SHA-256."""
    key = f"{master}|" + "/".join(str(p) for p in path)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(master: int, *path) -> np.random.Generator:
    """Fresh PCG64 generator for one (master seed, purpose) pair."""
    return np.random.default_rng(derive_seed(master, *path))
