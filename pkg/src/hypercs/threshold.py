"""Algorithmic detection thresholds.

For each background cube the cut ``x_i`` is the smallest value such that
``alpha`` percent of that cube's pixels lie strictly below it; the threshold
is ``T = beta * median(x_i)``.  The same procedure serves ACE and bulk
coherence maps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, HyperCSError

__all__ = [
    "SWEEP_MULTIPLIERS",
    "ThresholdSpec",
    "percentile_cut",
    "compute_threshold",
    "make_sweep",
    "count_over",
    "save_threshold",
    "load_threshold",
]

SWEEP_MULTIPLIERS = (0.85, 0.90, 0.95, 1.00, 1.05, 1.10, 1.15)


def make_sweep(T: float) -> list[float]:
    if T < 0:
        raise HyperCSError(f"threshold must be >= 0, got {T}")
    return [m * T for m in SWEEP_MULTIPLIERS]


@dataclass(frozen=True)
class ThresholdSpec:
    alpha: float
    beta: float
    T: float
    sweep: tuple = ()
    provenance: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if not 0 < self.alpha < 100:
            raise HyperCSError(f"alpha must lie in (0, 100), got {self.alpha}")
        if not self.beta > 0:
            raise HyperCSError(f"beta must be positive, got {self.beta}")
        if not self.T >= 0:
            raise HyperCSError(f"threshold must be >= 0, got {self.T}")
        if not self.sweep:
            object.__setattr__(self, "sweep", tuple(make_sweep(self.T)))
        object.__setattr__(self, "provenance", tuple(self.provenance))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "T": self.T,
            "sweep": list(self.sweep),
            "provenance": [dict(p) for p in self.provenance],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdSpec":
        try:
            return cls(float(d["alpha"]), float(d["beta"]), float(d["T"]),
                       tuple(float(v) for v in d.get("sweep", ())), tuple(d.get("provenance", ())))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid threshold description: {exc}") from exc


def percentile_cut(values, alpha: float = 99) -> float:
    """Smallest element with at least ``ceil(alpha N / 100)`` values strictly below it.

    For distinct values this is the sorted element at 0-based index
    ``ceil(alpha N / 100)``; a tie straddling that index moves the cut up to
    the next larger element.  When no element qualifies the maximum is
    returned.
    """
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    N = v.size
    if N == 0:
        raise HyperCSError("percentile_cut needs at least one value")
    if not 0 < alpha < 100:
        raise HyperCSError(f"alpha must lie in (0, 100), got {alpha}")
    m = math.ceil(Fraction(alpha) * N / 100)
    if m == 0:
        return float(v[0])
    if m >= N:
        return float(v[-1])
    j = int(np.searchsorted(v, v[m - 1], side="right"))
    return float(v[min(j, N - 1)])


def compute_threshold(background_sets: Sequence, alpha: float = 99, beta: float = 1.0,
                      ids: Optional[Sequence] = None) -> ThresholdSpec:
    """``T = beta * median`` of the per-cube percentile cuts."""
    sets = list(background_sets)
    if not sets:
        raise HyperCSError("need at least one background value set")
    if ids is None:
        ids = list(range(len(sets)))
    if len(ids) != len(sets):
        raise HyperCSError("ids and background sets differ in length")
    cuts = [percentile_cut(s, alpha) for s in sets]
    T = float(beta * np.median(cuts))
    prov = tuple({"id": i, "x": x} for i, x in zip(ids, cuts))
    return ThresholdSpec(float(alpha), float(beta), T, tuple(make_sweep(T)), prov)


def count_over(dmap, T: float) -> int:
    """Number of pixels whose value is strictly greater than ``T``."""
    values = dmap.values if hasattr(dmap, "values") else np.asarray(dmap)
    return int(np.count_nonzero(np.asarray(values) > T))


def save_threshold(spec: ThresholdSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


def load_threshold(path) -> ThresholdSpec:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: unreadable threshold file ({exc})") from exc
    return ThresholdSpec.from_dict(d)
