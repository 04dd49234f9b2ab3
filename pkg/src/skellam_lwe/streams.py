"""Deterministic derivation of independent random streams from one seed.

Every stream is a ``numpy.random.Generator`` over PCG64 seeded with a 64-bit
value obtained by folding labels into the master seed with the SplitMix64
finalizer::

    h = mix64(master)
    for label in labels:
        h = mix64(h ^ encode(label))

Integers are encoded as themselves (mod 2**64); strings as the first eight
bytes of their SHA-256 digest, read little-endian.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

_MASK64 = (1 << 64) - 1


def mix64(x: int) -> int:
    """SplitMix64 finalizer (bijective on 64-bit words)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _encode(label) -> int:
    if isinstance(label, str):
        return int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")
    return int(label) & _MASK64


def derive_seed(master_seed: int, *labels) -> int:
    h = mix64(int(master_seed) & _MASK64)
    for label in labels:
        h = mix64(h ^ _encode(label))
    return h


def derive_rng(master_seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, *labels)))


def worker_count() -> int:
    """Thread cap from ``PSA_THREADS`` (defaults to the CPU count)."""
    env = os.environ.get("PSA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)
