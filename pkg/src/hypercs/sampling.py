"""Shifted Walsh-Hadamard sampling plans.

Walsh rows are indexed in natural (Sylvester) order: row ``i`` of the
``n x n`` Hadamard matrix has entries ``(-1) ** popcount(i & p)``.  A plan
selects ``k`` of those rows.  With ``shifted=True`` the device measures with
``{0, 1}`` masks ``(1 + w) / 2``; the all-ones row 0 is always part of the
plan so the ``+-1`` measurements can be recovered as ``2 * y - y[row 0]``.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .cube import CubeSequence, HyperCube
from .errors import DimensionError, FormatError, HyperCSError
from .wavelet import is_power_of_two

__all__ = [
    "ORDERINGS",
    "SamplingPlan",
    "Measurements",
    "fast_wht",
    "sequency_order",
    "compression_to_k",
    "build_plan",
    "sample_cube",
    "save_plan",
    "load_plan",
    "write_measurements",
    "read_measurements",
]

ORDERINGS = ("max_variance", "sequency", "random")
MEAS_MAGIC = b"HSM1"
_MEAS_HEADER = struct.Struct("<4sII")


def fast_wht(v) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform in natural order along axis 0.

    Equals the product ``H_n @ v`` with the Sylvester Hadamard matrix, and
    ``fast_wht(fast_wht(v)) == n * v``.
    """
    a = np.array(v, dtype=np.float64, copy=True)
    if a.ndim == 0:
        raise DimensionError("fast_wht needs at least a 1-D input")
    n = a.shape[0]
    if not is_power_of_two(n):
        raise DimensionError(f"Walsh-Hadamard length must be a power of two, got {n}")
    rest = a.shape[1:]
    h = 1
    while h < n:
        a = a.reshape(n // (2 * h), 2, h, *rest)
        x = a[:, 0]
        y = a[:, 1]
        a = np.stack((x + y, x - y), axis=1)
        h *= 2
    return a.reshape(n, *rest)


def sequency_order(n: int) -> np.ndarray:
    """Natural row indices sorted by sequency (number of sign changes)."""
    if not is_power_of_two(n):
        raise DimensionError(f"n must be a power of two, got {n}")
    m = n.bit_length() - 1
    s = np.arange(n, dtype=np.int64)
    gray = s ^ (s >> 1)
    rev = np.zeros(n, dtype=np.int64)
    for bit in range(m):
        rev |= ((gray >> bit) & 1) << (m - 1 - bit)
    return rev


def compression_to_k(n: int, compression: float) -> int:
    """Measurement count ``round((1 - compression) * n)``, halves rounded up."""
    if not 0.0 < compression < 1.0:
        raise HyperCSError(f"compression must lie in (0, 1), got {compression}")
    return int(math.floor((1.0 - compression) * n + 0.5))


@dataclass(frozen=True)
class SamplingPlan:
    """Selected Walsh rows for a scene of ``n`` pixels.

    ``row_order[i]`` is the natural Walsh index measured by measurement ``i``.
    """

    n: int
    row_order: np.ndarray
    shifted: bool = True
    ordering: str = "sequency"
    seed: int = 0

    def __post_init__(self):
        rows = np.array(self.row_order, dtype=np.int64).reshape(-1)
        if not is_power_of_two(self.n) or self.n < 2:
            raise DimensionError(f"plan length n must be a power of two >= 2, got {self.n}")
        k = rows.size
        if not 1 <= k < self.n:
            raise DimensionError(f"need 1 <= k < n, got k={k}, n={self.n}")
        if rows.min() < 0 or rows.max() >= self.n:
            raise DimensionError("row_order entries out of range")
        if np.unique(rows).size != k:
            raise DimensionError("row_order entries must be distinct")
        if self.shifted and 0 not in rows:
            raise DimensionError("shifted plans must include the all-ones row 0")
        rows.flags.writeable = False
        object.__setattr__(self, "row_order", rows)

    @property
    def k(self) -> int:
        return int(self.row_order.size)

    @property
    def compression(self) -> float:
        return 1.0 - self.k / self.n

    @property
    def ones_position(self) -> Optional[int]:
        """Index of row 0 within the measurement vector, or None."""
        hit = np.flatnonzero(self.row_order == 0)
        return int(hit[0]) if hit.size else None

    def walsh_forward(self, X) -> np.ndarray:
        """``+-1`` measurements ``W_R X`` for an ``(n,)`` or ``(n, b)`` array."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] != self.n:
            raise DimensionError(f"expected {self.n} rows, got {X.shape[0]}")
        return fast_wht(X)[self.row_order]

    def walsh_adjoint(self, Z) -> np.ndarray:
        """``W_R^T Z`` for a ``(k,)`` or ``(k, b)`` array."""
        Z = np.asarray(Z, dtype=np.float64)
        if Z.shape[0] != self.k:
            raise DimensionError(f"expected {self.k} measurement rows, got {Z.shape[0]}")
        full = np.zeros((self.n,) + Z.shape[1:])
        full[self.row_order] = Z
        return fast_wht(full)

    def to_pm(self, Y) -> np.ndarray:
        """Convert device measurements to the ``+-1`` Walsh frame."""
        Y = np.asarray(Y, dtype=np.float64)
        if not self.shifted:
            return Y.copy()
        i0 = self.ones_position
        return 2.0 * Y - Y[i0]

    def dense(self) -> np.ndarray:
        """Dense ``k x n`` device matrix; intended for small n only."""
        W = fast_wht(np.eye(self.n))[self.row_order]
        return (1.0 + W) / 2.0 if self.shifted else W

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "compression": self.compression,
            "shifted": bool(self.shifted),
            "ordering": self.ordering,
            "row_order": [int(r) for r in self.row_order],
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingPlan":
        try:
            plan = cls(
                n=int(d["n"]),
                row_order=np.asarray(d["row_order"], dtype=np.int64),
                shifted=bool(d["shifted"]),
                ordering=str(d["ordering"]),
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid plan description: {exc}") from exc
        if "k" in d and int(d["k"]) != plan.k:
            raise FormatError(f"plan k={d['k']} disagrees with row_order length {plan.k}")
        return plan

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class Measurements:
    """Device measurements ``Y = S X`` of one frame, shape ``(k, b)``."""

    Y: np.ndarray = field(repr=False)

    def __post_init__(self):
        Y = np.array(self.Y, dtype=np.float64, copy=True)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.ndim != 2:
            raise DimensionError(f"measurements must be 2-D (k, b), got {Y.shape}")
        if not np.all(np.isfinite(Y)):
            raise DimensionError("measurements contain non-finite values")
        Y.flags.writeable = False
        object.__setattr__(self, "Y", Y)

    @property
    def k(self) -> int:
        return self.Y.shape[0]

    @property
    def b(self) -> int:
        return self.Y.shape[1]


def _training_variance(training: Iterable[HyperCube], n: int) -> np.ndarray:
    cols = []
    for frame in training:
        if frame.n != n:
            raise DimensionError(f"training frame has {frame.n} pixels, plan needs {n}")
        cols.append(fast_wht(frame.matrix))
    if not cols:
        raise HyperCSError("max_variance ordering needs a non-empty training set")
    return np.var(np.concatenate(cols, axis=1), axis=1)


def build_plan(
    n: int,
    compression: float,
    ordering: str = "sequency",
    training: Optional[CubeSequence] = None,
    seed: int = 0,
    shifted: bool = True,
) -> SamplingPlan:
    """Choose ``k = round((1 - compression) n)`` Walsh rows.

    ``max_variance`` ranks rows by the variance of their ``+-1`` measurements
    over every band of every training frame (descending, ties by index);
    ``sequency`` takes the lowest-sequency rows; ``random`` draws a seeded
    permutation.  Row 0 always comes first.
    """
    if not is_power_of_two(n) or n < 2:
        raise DimensionError(f"n must be a power of two >= 2, got {n}")
    k = compression_to_k(n, compression)
    if not 1 <= k < n:
        raise HyperCSError(f"compression {compression} gives k={k}, need 1 <= k < {n}")
    if ordering == "sequency":
        order = sequency_order(n)
    elif ordering == "max_variance":
        if training is None:
            raise HyperCSError("max_variance ordering needs training data")
        var = _training_variance(training, n)
        idx = np.arange(n)
        order = np.lexsort((idx, -var))
    elif ordering == "random":
        rng = np.random.Generator(np.random.Philox(key=int(seed)))
        order = np.concatenate(([0], 1 + rng.permutation(n - 1)))
    else:
        raise HyperCSError(f"unknown ordering {ordering!r}; choose from {ORDERINGS}")
    order = np.concatenate(([0], order[order != 0]))
    return SamplingPlan(n=n, row_order=order[:k], shifted=shifted, ordering=ordering, seed=seed)


def sample_cube(plan: SamplingPlan, cube: HyperCube) -> Measurements:
    """Measure every band of ``cube`` with the plan's rows."""
    if cube.n != plan.n:
        raise DimensionError(f"cube has {cube.n} pixels, plan expects {plan.n}")
    Z = fast_wht(cube.matrix)
    Y = Z[plan.row_order]
    if plan.shifted:
        Y = 0.5 * (Y + Z[0])
    return Measurements(Y)


def save_plan(plan: SamplingPlan, path) -> None:
    Path(path).write_text(json.dumps(plan.to_dict(), indent=2) + "\n")


def load_plan(path) -> SamplingPlan:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: unreadable plan file ({exc})") from exc
    return SamplingPlan.from_dict(d)


def write_measurements(meas: Measurements, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MEAS_HEADER.pack(MEAS_MAGIC, meas.k, meas.b))
        fh.write(np.ascontiguousarray(meas.Y, dtype="<f8").tobytes())


def read_measurements(path) -> Measurements:
    raw = Path(path).read_bytes()
    if len(raw) < _MEAS_HEADER.size:
        raise FormatError(f"{path}: file too short for an HSM1 header")
    magic, k, b = _MEAS_HEADER.unpack_from(raw)
    if magic != MEAS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MEAS_MAGIC!r}")
    expected = _MEAS_HEADER.size + 8 * k * b
    if k < 1 or b < 1 or len(raw) != expected:
        raise FormatError(f"{path}: payload size {len(raw)} does not match k={k}, b={b}")
    Y = np.frombuffer(raw, dtype="<f8", count=k * b, offset=_MEAS_HEADER.size).reshape(k, b)
    if not np.all(np.isfinite(Y)):
        raise FormatError(f"{path}: payload contains non-finite values")
    return Measurements(Y.astype(np.float64))
