"""Deterministic seed derivation for parallel-safe generators."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *parts: object) -> int:
    """Stable 64-bit seed from a base seed plus arbitrary string-able parts.

    Independent of scheduling order, platform hash randomization, and
    process boundaries, so per-query workers can draw from their own
    streams without coordinating.
    """
    key = ":".join([str(seed), *(str(p) for p in parts)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, *parts: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *parts))
