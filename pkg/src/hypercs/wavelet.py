"""Orthonormal 1-D Haar transform along the first axis.

Coefficients are laid out coarse-to-fine::

    [approx_L | detail_L | detail_{L-1} | ... | detail_1]

where ``detail_1`` (the finest level, n/2 values) occupies the tail.  Each
level maps a pair ``(a, d)`` to ``((a + d) / sqrt(2), (a - d) / sqrt(2))``,
so the transform matrix is orthogonal and ``haar_inverse`` is its transpose.

Both functions accept a vector of length n or an ``(n, b)`` array, in which
case every column (band) is transformed independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError

__all__ = ["HaarSpec", "haar_forward", "haar_inverse", "is_power_of_two"]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class HaarSpec:
    """Transform length and decomposition depth (``levels=None`` means full depth)."""

    n: int
    levels: Optional[int] = None

    def __post_init__(self):
        if not is_power_of_two(self.n):
            raise DimensionError(f"Haar transform length must be a power of two, got {self.n}")
        full = self.n.bit_length() - 1
        if self.levels is None:
            object.__setattr__(self, "levels", full)
        elif not (0 <= self.levels <= full) or (self.levels == 0 and full > 0):
            raise DimensionError(f"levels must be in [1, {full}] for n={self.n}, got {self.levels}")

    @property
    def max_levels(self) -> int:
        return self.n.bit_length() - 1


def _prepare(v, spec):
    out = np.array(v, dtype=np.float64, copy=True)
    if out.ndim == 0:
        raise DimensionError("Haar transform needs at least a 1-D input")
    n = out.shape[0]
    if spec is None:
        spec = HaarSpec(n)
    elif spec.n != n:
        raise DimensionError(f"input length {n} does not match HaarSpec.n={spec.n}")
    return out, spec


def haar_forward(v, spec: Optional[HaarSpec] = None) -> np.ndarray:
    """Orthonormal Haar analysis: returns the coefficient vector ``u = H v``."""
    out, spec = _prepare(v, spec)
    m = spec.n
    for _ in range(spec.levels):
        a = out[0:m:2]
        d = out[1:m:2]
        s = (a + d) * _INV_SQRT2
        t = (a - d) * _INV_SQRT2
        half = m // 2
        out[:half] = s
        out[half:m] = t
        m = half
    return out


def haar_inverse(u, spec: Optional[HaarSpec] = None) -> np.ndarray:
    """Orthonormal Haar synthesis: returns ``v = H^T u``."""
    out, spec = _prepare(u, spec)
    m = spec.n >> (spec.levels - 1) if spec.levels else spec.n
    for _ in range(spec.levels):
        half = m // 2
        s = out[:half].copy()
        t = out[half:m].copy()
        out[0:m:2] = (s + t) * _INV_SQRT2
        out[1:m:2] = (s - t) * _INV_SQRT2
        m *= 2
    return out
