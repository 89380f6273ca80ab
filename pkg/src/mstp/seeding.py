"""Deterministic sub-seed derivation.

Every stochastic component draws from a generator derived from a hash of its
call coordinates (seed, clip id, step, level, ...).  This makes runs
byte-identical regardless of evaluation order or thread count.
"""
from __future__ import annotations

import hashlib

import numpy as np

_SEP = "\x1f"


def derive_seed(*parts: object) -> int:
    """Hash arbitrary coordinates into a stable 64-bit seed."""
    key = _SEP.join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(*parts: object) -> np.random.Generator:
    """Return a fresh generator seeded from the given coordinates."""
    return np.random.default_rng(derive_seed(*parts))
