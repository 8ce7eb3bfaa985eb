"""Seeded Bernoulli (Rademacher) sensing matrices.

Entries are drawn from SplitMix64 so a given ``(m, n, seed)`` produces the
same matrix on every platform and in any language that implements the
generator.  Stream-to-entry mapping: the i-th 64-bit output (i = 1, 2, ...)
decides entry ``i - 1`` in row-major order; the top bit set means
``+1/sqrt(m)``, clear means ``-1/sqrt(m)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First ``count`` outputs of SplitMix64 started from state ``seed``."""
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + np.arange(1, count + 1, dtype=np.uint64) * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class SensingMatrix:
    entries: np.ndarray
    seed: int
    scale: float

    @property
    def shape(self):
        return self.entries.shape

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def ratio(self) -> float:
        return self.m / self.n

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def bernoulli_matrix(m: int, n: int, seed: int) -> SensingMatrix:
    """Equiprobable +-1/sqrt(m) matrix of shape (m, n).

    The 1/sqrt(m) scale makes ``E||Phi x||^2 = ||x||^2``.
    """
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    if m > n:
        raise ValueError(f"m={m} exceeds n={n}; sensing must not oversample")
    scale = 1.0 / np.sqrt(m)
    top = splitmix64(seed, m * n) >> np.uint64(63)
    entries = np.where(top == 1, scale, -scale).reshape(m, n)
    entries.setflags(write=False)
    return SensingMatrix(entries, int(seed), float(scale))


def compress(Phi, X) -> np.ndarray:
    """Measurements ``Y = Phi X`` for a single signal or a column batch."""
    A = np.asarray(Phi, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim not in (1, 2) or X.shape[0] != A.shape[1]:
        raise DimensionError(f"sensing matrix {A.shape} cannot act on {X.shape}")
    return A @ X
