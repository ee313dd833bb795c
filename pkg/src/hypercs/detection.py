"""ACE detection, bulk coherence and temporal persistence.

ACE scores a pixel spectrum ``x`` against a target signature ``s`` as the
squared cosine of their angle after whitening by the background covariance
``Gamma``::

    ace = (s' G^-1 x)^2 / ((s' G^-1 s) (x' G^-1 x))

``Gamma`` is never inverted: both vectors are whitened with triangular solves
against a ridge-regularized Cholesky factor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .cube import HyperCube
from .errors import DimensionError, FormatError, HyperCSError

__all__ = [
    "CENTERING",
    "STATISTICS",
    "Signature",
    "BackgroundModel",
    "DetectionMap",
    "estimate_background",
    "ace",
    "ace_map",
    "bulk_coherence",
    "persistence_filter",
    "read_signature",
    "write_signature",
    "write_map",
    "read_map",
]

STATISTICS = ("ace", "bulk", "bulk_persist")
# "both": subtract the background mean from pixel and signature;
# "pixel": from the pixel only (signature is an additive component);
# "none": use raw vectors.
CENTERING = ("both", "pixel", "none")
PERSISTENCE_FRAMES = 5


@dataclass(frozen=True)
class Signature:
    s: np.ndarray
    name: str = "target"

    def __post_init__(self):
        s = np.array(self.s, dtype=np.float64, copy=True).reshape(-1)
        if s.size < 1 or not np.all(np.isfinite(s)):
            raise HyperCSError("signature must be a non-empty finite vector")
        if not np.linalg.norm(s) > 0:
            raise HyperCSError("signature must have nonzero norm")
        s.flags.writeable = False
        object.__setattr__(self, "s", s)

    @property
    def b(self) -> int:
        return self.s.size


@dataclass(frozen=True)
class BackgroundModel:
    """Background mean, ML covariance and the lower Cholesky factor of ``cov + ridge I``."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    ridge: float
    sample_count: int

    @property
    def b(self) -> int:
        return self.mean.size

    def whiten(self, V) -> np.ndarray:
        """Solve ``chol @ W = V`` for ``V`` of shape ``(b,)`` or ``(b, m)``."""
        return solve_triangular(self.chol, V, lower=True, check_finite=False)


def estimate_background(pixels) -> BackgroundModel:
    """Fit mean and maximum-likelihood (1/N) covariance to ``(N, b)`` spectra.

    The ridge starts at ``1e-8 * trace / b`` and grows tenfold until the
    Cholesky factorization succeeds, giving up past ``1e-2 * trace / b``.
    A zero covariance uses 1.0 in place of ``trace / b``.
    """
    P = np.asarray(pixels, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] < 2:
        raise HyperCSError(f"need at least 2 background spectra as an (N, b) array, got {P.shape}")
    N, b = P.shape
    mean = P.mean(axis=0)
    D = P - mean
    cov = D.T @ D / N
    cov = 0.5 * (cov + cov.T)
    level = np.trace(cov) / b
    if not level > 0:
        level = 1.0
    ridge = 1e-8 * level
    while True:
        try:
            chol = np.linalg.cholesky(cov + ridge * np.eye(b))
            break
        except np.linalg.LinAlgError:
            ridge *= 10.0
            if ridge > 1e-2 * level * (1 + 1e-9):
                raise HyperCSError("background covariance factorization failed at maximum ridge")
    return BackgroundModel(mean=mean, cov=cov, chol=chol, ridge=float(ridge), sample_count=N)


def _centered(bg: BackgroundModel, X, s, center: str):
    if center not in CENTERING:
        raise HyperCSError(f"centering must be one of {CENTERING}, got {center!r}")
    if center == "both":
        return X - bg.mean, s - bg.mean
    if center == "pixel":
        return X - bg.mean, s
    return X, s


def _ace_rows(X, sig: Signature, bg: BackgroundModel, center: str) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != bg.b or sig.b != bg.b:
        raise DimensionError(
            f"band mismatch: pixels have {X.shape[1]}, signature {sig.b}, background {bg.b}"
        )
    Xc, sc = _centered(bg, X, sig.s, center)
    W = bg.whiten(Xc.T)
    t = bg.whiten(sc)
    tt = float(t @ t)
    ww = np.einsum("ij,ij->j", W, W)
    num = (t @ W) ** 2
    den = tt * ww
    out = np.zeros(X.shape[0])
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return np.clip(out, 0.0, 1.0)


def ace(x, sig: Signature, bg: BackgroundModel, center: str = "both") -> float:
    """ACE value of one spectrum; 0 when the whitened pixel (or signature) vanishes."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("ace expects a single spectrum; use ace_map for cubes")
    return float(_ace_rows(x[None, :], sig, bg, center)[0])


@dataclass(frozen=True)
class DetectionMap:
    values: np.ndarray = field(repr=False)
    statistic: str = "ace"
    frame: int = 0
    signature_name: str = "target"

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 2:
            raise DimensionError(f"detection map must be 2-D, got shape {v.shape}")
        if self.statistic not in STATISTICS:
            raise HyperCSError(f"unknown statistic {self.statistic!r}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def ace_map(cube: HyperCube, sig: Signature, bg: BackgroundModel, center: str = "both",
            frame: int = 0) -> DetectionMap:
    vals = _ace_rows(cube.matrix, sig, bg, center).reshape(cube.n1, cube.n2)
    return DetectionMap(vals, "ace", frame, sig.name)


def bulk_coherence(dmap: DetectionMap) -> DetectionMap:
    """``1 - prod(1 - c_i)`` over the 3x3 neighborhood, truncated at the borders."""
    if dmap.statistic != "ace":
        raise HyperCSError(f"bulk coherence needs an ace map, got {dmap.statistic!r}")
    q = np.pad(1.0 - dmap.values, 1, mode="constant", constant_values=1.0)
    n1, n2 = dmap.shape
    prod = np.ones((n1, n2))
    for dr in range(3):
        for dc in range(3):
            prod = prod * q[dr:dr + n1, dc:dc + n2]
    return DetectionMap(np.clip(1.0 - prod, 0.0, 1.0), "bulk", dmap.frame, dmap.signature_name)


def persistence_filter(maps: Sequence[DetectionMap], T: float,
                       window: int = PERSISTENCE_FRAMES) -> list[DetectionMap]:
    """Zero every pixel whose value was not above ``T`` in each of the last ``window`` frames.

    ``maps`` are consecutive frames in order; the first ``window - 1`` frames
    can never pass.
    """
    maps = list(maps)
    if not maps:
        return []
    shape = maps[0].shape
    for m in maps:
        if m.statistic != "bulk":
            raise HyperCSError(f"persistence needs bulk coherence maps, got {m.statistic!r}")
        if m.shape != shape:
            raise DimensionError("persistence maps must share one shape")
    above = np.stack([m.values > T for m in maps])
    # run[t] = number of consecutive frames ending at t with value above T
    run = np.zeros(above.shape, dtype=np.int64)
    run[0] = above[0]
    for t in range(1, len(maps)):
        run[t] = np.where(above[t], run[t - 1] + 1, 0)
    out = []
    for t, m in enumerate(maps):
        keep = run[t] >= window
        out.append(DetectionMap(np.where(keep, m.values, 0.0), "bulk_persist", m.frame, m.signature_name))
    return out


def write_signature(sig: Signature, path) -> None:
    Path(path).write_text("".join(f"{v:.17g}\n" for v in sig.s))


def read_signature(path, name: str | None = None) -> Signature:
    path = Path(path)
    try:
        vals = [float(line.split(",")[0]) for line in path.read_text().splitlines() if line.strip()]
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: unreadable signature CSV ({exc})") from exc
    return Signature(np.array(vals), name or path.stem)


def write_map(dmap: DetectionMap, path) -> None:
    """CSV of the map values plus a ``<path>.json`` sidecar."""
    path = Path(path)
    lines = [",".join(f"{v:.17g}" for v in row) for row in dmap.values]
    path.write_text("\n".join(lines) + "\n")
    meta = {"statistic": dmap.statistic, "frame": dmap.frame, "signature_name": dmap.signature_name}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n")


def read_map(path) -> DetectionMap:
    path = Path(path)
    try:
        rows = [[float(v) for v in line.split(",")] for line in path.read_text().splitlines() if line.strip()]
        vals = np.array(rows, dtype=np.float64)
        meta_path = Path(str(path) + ".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: unreadable detection map ({exc})") from exc
    return DetectionMap(vals, meta.get("statistic", "ace"), int(meta.get("frame", 0)),
                        meta.get("signature_name", "target"))
