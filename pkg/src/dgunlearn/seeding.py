"""Deterministic seed derivation; no global RNG is ever touched."""
from __future__ import annotations

import zlib

import numpy as np


def _as_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def derive(seed, *tags) -> list[int]:
    """Entropy list for ``np.random.default_rng`` from a base seed and tags."""
    base = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    return [_as_int(t) for t in (*base, *tags)]


def rng(seed, *tags) -> np.random.Generator:
    return np.random.default_rng(derive(seed, *tags))
