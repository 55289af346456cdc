"""Deterministic, order-independent random values.

Every stochastic quantity in the simulator is a pure function of a seed
plus a handful of naming parts (system id, channel, timestamp, ...).
That makes values independent of event interleaving: a fault injected on
one system cannot shift the random draws of any other, and re-running a
scenario reproduces every value bit for bit.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def key64(*parts) -> int:
    """Stable 64-bit key for a tuple of naming parts."""
    raw = ":".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "big")


def _splitmix(x: np.ndarray) -> np.ndarray:
    x = (x + _GOLDEN) & _U64
    x = ((x ^ (x >> np.uint64(30))) * _MIX1) & _U64
    x = ((x ^ (x >> np.uint64(27))) * _MIX2) & _U64
    return x ^ (x >> np.uint64(31))


def unit_vector(key: int, idx: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) values for integer indices under one key."""
    x = (np.asarray(idx, dtype=np.uint64) * _GOLDEN + np.uint64(key)) & _U64
    return (_splitmix(x) >> np.uint64(11)) * (1.0 / (1 << 53))


def unit(*parts) -> float:
    """One uniform [0, 1) draw named by its parts."""
    return float(unit_vector(key64(*parts), np.zeros(1, dtype=np.uint64))[0])


def uniform(lo: float, hi: float, *parts) -> float:
    return lo + (hi - lo) * unit(*parts)
