"""Split Bregman reconstruction from Walsh-Hadamard measurements.

Two equality-constrained problems are solved band by band:

* ``l1``: minimize ``||U||_1`` subject to ``S H^-1 U = Y`` (Haar coefficients)
* ``tv``: minimize the anisotropic periodic TV of ``X`` subject to ``S X = Y``

Measurements are first moved to the ``+-1`` Walsh frame and divided by
``sqrt(n)`` so the sensing operator ``A`` has orthonormal rows
(``A A^T = I``).  Each band is also divided by a data-derived scale, which
keeps the shrinkage threshold ``1/lambda`` meaningful for any radiance units
and makes the solvers exactly positively homogeneous.

All bands are iterated together as columns of one array; the column updates
never mix, so this is the same as solving every band on its own.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .cube import HyperCube
from .errors import DimensionError, HyperCSError
from .sampling import Measurements, SamplingPlan, fast_wht
from .wavelet import haar_forward, haar_inverse

__all__ = [
    "METHODS",
    "SolverParams",
    "ReconstructionResult",
    "shrink",
    "grad_x",
    "grad_y",
    "grad_x_adjoint",
    "grad_y_adjoint",
    "tv_norm",
    "reconstruct",
    "reconstruct_l1",
    "reconstruct_tv",
    "write_result",
]

log = logging.getLogger(__name__)

METHODS = ("l1", "tv")
_INNER = ("direct", "cg")


@dataclass(frozen=True)
class SolverParams:
    """Split Bregman weights and stopping rules.

    ``mu`` weights the data constraint, ``lam`` the splitting penalty (the
    shrinkage threshold is ``1/lam`` in scaled units).  ``inner`` selects the
    least-squares step: ``"direct"`` uses the closed-form / factored solve,
    ``"cg"`` runs conjugate gradients with ``inner_cg_tol`` and
    ``inner_cg_max``.
    """

    mu: float = 1.0
    lam: float = 1.0
    outer_tol: float = 1e-4
    max_outer: int = 200
    inner_cg_tol: float = 1e-6
    inner_cg_max: int = 100
    inner: str = "direct"

    def __post_init__(self):
        if not (self.mu > 0 and self.lam > 0):
            raise HyperCSError("mu and lambda must be positive")
        if not (self.outer_tol > 0 and self.inner_cg_tol > 0):
            raise HyperCSError("tolerances must be positive")
        if self.max_outer < 1 or self.inner_cg_max < 1:
            raise HyperCSError("iteration caps must be >= 1")
        if self.inner not in _INNER:
            raise HyperCSError(f"inner solver must be one of {_INNER}, got {self.inner!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolverParams":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise HyperCSError(f"unknown solver parameters: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ReconstructionResult:
    cube: HyperCube
    method: str
    residual_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    params: SolverParams = field(default_factory=SolverParams)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else float("nan")

    def sidecar(self) -> dict:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "converged": self.converged,
            "final_residual": self.final_residual,
            "params": self.params.to_dict(),
        }


def shrink(v, gamma: float) -> np.ndarray:
    """Soft threshold ``sign(v) * max(|v| - gamma, 0)``."""
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - gamma, 0.0)


# Forward differences with periodic wraparound; axis 0 is the row index i.
def grad_x(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.roll(x, -1, axis=0) - x


def grad_y(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.roll(x, -1, axis=1) - x


def grad_x_adjoint(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.roll(p, 1, axis=0) - p


def grad_y_adjoint(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.roll(p, 1, axis=1) - p


def tv_norm(X, n1: int, n2: int) -> float:
    """Anisotropic periodic TV of an ``(n, b)`` matrix, summed over bands."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != n1 * n2:
        raise DimensionError(f"matrix with {X.shape[0]} rows does not match {n1}x{n2}")
    img = X.reshape(n1, n2, -1)
    return float(np.abs(grad_x(img)).sum() + np.abs(grad_y(img)).sum())


def _block_cg(apply_M: Callable, rhs, x0, tol: float, maxiter: int):
    """Conjugate gradients on every column of ``rhs`` at once."""
    x = x0.copy()
    r = rhs - apply_M(x)
    p = r.copy()
    rs = np.einsum("ij,ij->j", r, r)
    bnorm = np.sqrt(np.einsum("ij,ij->j", rhs, rhs))
    stop = tol * np.where(bnorm > 0, bnorm, 1.0)
    for _ in range(maxiter):
        if np.all(np.sqrt(rs) <= stop):
            break
        Mp = apply_M(p)
        pMp = np.einsum("ij,ij->j", p, Mp)
        active = (np.sqrt(rs) > stop) & (pMp > 0)
        alpha = np.where(active, rs / np.where(pMp > 0, pMp, 1.0), 0.0)
        x += alpha * p
        r -= alpha * Mp
        rs_new = np.einsum("ij,ij->j", r, r)
        beta = np.where(active, rs_new / np.where(rs > 0, rs, 1.0), 0.0)
        p = r + beta * p
        rs = rs_new
    return x


class _Problem:
    """Measurements moved to the orthonormal-row frame and scaled per band."""

    def __init__(self, meas: Measurements, plan: SamplingPlan):
        if meas.k != plan.k:
            raise DimensionError(f"measurements have k={meas.k}, plan has k={plan.k}")
        self.plan = plan
        self.n = plan.n
        self.root_n = np.sqrt(plan.n)
        self.i0 = plan.ones_position
        if self.i0 is None:
            raise DimensionError("reconstruction needs the all-ones row 0 in the plan")
        f = plan.to_pm(meas.Y) / self.root_n
        self.others = np.flatnonzero(np.arange(plan.k) != self.i0)
        detail = f[self.others]
        rms = np.sqrt(np.mean(detail**2, axis=0)) if detail.size else np.zeros(f.shape[1])
        peak = np.max(np.abs(f), axis=0)
        self.scale = np.where(rms > 0, rms, np.where(peak > 0, peak, 1.0))
        self.f = f / self.scale
        dnorm = np.linalg.norm(self.f[self.others], axis=0)
        fnorm = np.linalg.norm(self.f, axis=0)
        self.denom = np.where(dnorm > 0, dnorm, np.where(fnorm > 0, fnorm, 1.0))

    def A(self, x):
        return fast_wht(x)[self.plan.row_order] / self.root_n

    def At(self, z):
        full = np.zeros((self.n, z.shape[1]))
        full[self.plan.row_order] = z
        return fast_wht(full) / self.root_n

    def residual(self, Ax) -> float:
        r = np.linalg.norm(Ax - self.f, axis=0) / self.denom
        return float(np.max(r))


def _rel_gap(diff_sq, ref_sq) -> float:
    gap = np.sqrt(diff_sq) / np.where(ref_sq > 0, np.sqrt(ref_sq), 1.0)
    return float(np.max(np.where(ref_sq > 0, gap, np.sqrt(diff_sq))))


def reconstruct_l1(meas: Measurements, plan: SamplingPlan, params: Optional[SolverParams] = None,
                   shape: Optional[Sequence[int]] = None) -> ReconstructionResult:
    """Haar-domain basis pursuit via split Bregman.

    Iterates ``u <- argmin mu/2 |A H^T u - f^k|^2 + lam/2 |d - u - c|^2``,
    ``d <- shrink(u + c, 1/lam)``, ``c <- c + u - d``,
    ``f^k <- f^k + f - A H^T u``.  Because ``A A^T = I`` the u-step has the
    closed form ``(1/lam)(I - P) r + P r / (mu + lam)`` with ``P = A^T A``.
    """
    params = params or SolverParams()
    n1, n2 = _resolve_shape(plan.n, shape)
    prob = _Problem(meas, plan)
    mu, lam = params.mu, params.lam
    f = prob.f
    b = f.shape[1]

    def Aop(u):
        return prob.A(haar_inverse(u))

    def Atop(z):
        return haar_forward(prob.At(z))

    kappa = 1.0 / lam - 1.0 / (mu + lam)
    u = np.zeros((prob.n, b))
    d = np.zeros_like(u)
    c = np.zeros_like(u)
    fk = f.copy()
    history = []
    converged = False
    it = 0
    for it in range(1, params.max_outer + 1):
        if params.inner == "direct":
            g = Aop(d - c)
            Ar = mu * fk + lam * g
            u = (d - c) + Atop((mu / lam) * fk - kappa * Ar)
            Au = Ar / (mu + lam)
        else:
            rhs = mu * Atop(fk) + lam * (d - c)
            u = _block_cg(lambda v: mu * Atop(Aop(v)) + lam * v, rhs, u,
                          params.inner_cg_tol, params.inner_cg_max)
            Au = Aop(u)
        d = shrink(u + c, 1.0 / lam)
        c += u - d
        fk += f - Au
        res = prob.residual(Au)
        history.append(res)
        gap = _rel_gap(np.sum((u - d) ** 2, axis=0), np.sum(u**2, axis=0))
        if res <= params.outer_tol and gap <= params.outer_tol:
            converged = True
            break
    X = haar_inverse(u) * prob.scale
    if not converged:
        log.info("l1 reconstruction stopped at max_outer=%d (residual %.3g)", it, history[-1])
    return ReconstructionResult(HyperCube.from_matrix(X, n1, n2), "l1", history, it, converged, params)


class _TVSystem:
    """Exact solver for ``(mu A^T A + lam L) x = r`` on an n1 x n2 grid.

    ``L`` is the periodic Laplacian ``Dx^T Dx + Dy^T Dy``.  The all-ones row
    of ``A`` is folded into the FFT-diagonal part ``B = lam L + mu q q^T``;
    the remaining rows enter through the Woodbury identity with a
    ``(k-1) x (k-1)`` capacitance matrix built from fast transforms.
    """

    _cache: dict = {}

    def __init__(self, plan: SamplingPlan, n1: int, n2: int, mu: float, lam: float):
        self.plan, self.n1, self.n2, self.mu = plan, n1, n2, mu
        self.n = plan.n
        self.root_n = np.sqrt(self.n)
        self.i0 = plan.ones_position
        self.others = np.flatnonzero(np.arange(plan.k) != self.i0)
        self.rows = plan.row_order[self.others]
        ex = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(n1) / n1)
        ey = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(n2) / n2)
        eig = lam * (ex[:, None] + ey[None, :])
        eig[0, 0] = mu
        self.eig = eig[:, : n2 // 2 + 1, None]
        m = self.rows.size
        self.chol = None
        if m:
            G = np.empty((m, m))
            for start in range(0, m, 64):
                cols = np.arange(start, min(start + 64, m))
                E = np.zeros((self.n, cols.size))
                E[self.rows[cols], np.arange(cols.size)] = 1.0
                V = fast_wht(E) / self.root_n
                G[:, cols] = fast_wht(self.B_inv(V))[self.rows] / self.root_n
            C = 0.5 * (G + G.T) + np.eye(m) / mu
            self.chol = cho_factor(C, lower=True)

    @classmethod
    def get(cls, plan, n1, n2, mu, lam):
        key = (plan.n, plan.row_order.tobytes(), n1, n2, float(mu), float(lam))
        sys_ = cls._cache.get(key)
        if sys_ is None:
            if len(cls._cache) >= 8:
                cls._cache.pop(next(iter(cls._cache)))
            sys_ = cls(plan, n1, n2, mu, lam)
            cls._cache[key] = sys_
        return sys_

    def B_inv(self, v):
        img = v.reshape(self.n1, self.n2, -1)
        spec = np.fft.rfft2(img, axes=(0, 1)) / self.eig
        return np.fft.irfft2(spec, s=(self.n1, self.n2), axes=(0, 1)).reshape(self.n, -1)

    def solve(self, rhs):
        """Return ``x`` and ``A x`` (in plan row order)."""
        y = self.B_inv(rhs)
        Ax = np.empty((self.plan.k, rhs.shape[1]))
        Ax[self.i0] = rhs.sum(axis=0) / self.root_n / self.mu
        if self.chol is None:
            return y, Ax
        z = fast_wht(y)[self.rows] / self.root_n
        w = cho_solve(self.chol, z)
        full = np.zeros_like(rhs)
        full[self.rows] = w
        x = y - self.B_inv(fast_wht(full) / self.root_n)
        Ax[self.others] = w / self.mu
        return x, Ax


def reconstruct_tv(meas: Measurements, plan: SamplingPlan, params: Optional[SolverParams] = None,
                   shape: Optional[Sequence[int]] = None) -> ReconstructionResult:
    """Anisotropic TV minimization via split Bregman.

    Auxiliary variables ``dx ~ grad_x x`` and ``dy ~ grad_y x`` are shrunk
    with threshold ``1/lam``; the x-step solves
    ``(mu A^T A + lam L) x = mu A^T f^k + lam (Dx^T(dx - bx) + Dy^T(dy - by))``.
    """
    params = params or SolverParams()
    n1, n2 = _resolve_shape(plan.n, shape)
    prob = _Problem(meas, plan)
    mu, lam = params.mu, params.lam
    f = prob.f
    b = f.shape[1]
    system = _TVSystem.get(plan, n1, n2, mu, lam) if params.inner == "direct" else None

    def grads(x):
        img = x.reshape(n1, n2, b)
        return grad_x(img), grad_y(img)

    def lap(x):
        gx, gy = grads(x)
        return (grad_x_adjoint(gx) + grad_y_adjoint(gy)).reshape(prob.n, b)

    x = np.zeros((prob.n, b))
    dx = np.zeros((n1, n2, b))
    dy = np.zeros_like(dx)
    bx = np.zeros_like(dx)
    by = np.zeros_like(dx)
    fk = f.copy()
    history = []
    converged = False
    it = 0
    for it in range(1, params.max_outer + 1):
        rhs = mu * prob.At(fk) + lam * (grad_x_adjoint(dx - bx) + grad_y_adjoint(dy - by)).reshape(prob.n, b)
        if system is not None:
            x, Ax = system.solve(rhs)
        else:
            x = _block_cg(lambda v: mu * prob.At(prob.A(v)) + lam * lap(v), rhs, x,
                          params.inner_cg_tol, params.inner_cg_max)
            Ax = prob.A(x)
        gx, gy = grads(x)
        dx = shrink(gx + bx, 1.0 / lam)
        dy = shrink(gy + by, 1.0 / lam)
        bx += gx - dx
        by += gy - dy
        fk += f - Ax
        res = prob.residual(Ax)
        history.append(res)
        diff = np.sum((gx - dx) ** 2, axis=(0, 1)) + np.sum((gy - dy) ** 2, axis=(0, 1))
        ref = np.sum(gx**2, axis=(0, 1)) + np.sum(gy**2, axis=(0, 1))
        gap = _rel_gap(diff, ref)
        if res <= params.outer_tol and gap <= params.outer_tol:
            converged = True
            break
    X = x * prob.scale
    if not converged:
        log.info("tv reconstruction stopped at max_outer=%d (residual %.3g)", it, history[-1])
    return ReconstructionResult(HyperCube.from_matrix(X, n1, n2), "tv", history, it, converged, params)


def reconstruct(meas: Measurements, plan: SamplingPlan, method: str, params: Optional[SolverParams] = None,
                shape: Optional[Sequence[int]] = None) -> ReconstructionResult:
    if method == "l1":
        return reconstruct_l1(meas, plan, params, shape)
    if method == "tv":
        return reconstruct_tv(meas, plan, params, shape)
    raise HyperCSError(f"unknown reconstruction method {method!r}; choose from {METHODS}")


def _resolve_shape(n: int, shape) -> tuple[int, int]:
    if shape is None:
        side = int(round(np.sqrt(n)))
        if side * side != n:
            raise DimensionError(f"n={n} is not a square; pass shape=(n1, n2)")
        return side, side
    n1, n2 = (int(s) for s in shape)
    if n1 * n2 != n:
        raise DimensionError(f"shape {n1}x{n2} does not match plan n={n}")
    return n1, n2


def write_result(result: ReconstructionResult, path) -> None:
    """Write the cube as HSC1 and its JSON sidecar next to it (``<path>.json``)."""
    from .cube import write_cube

    path = Path(path)
    write_cube(result.cube, path)
    Path(str(path) + ".json").write_text(json.dumps(result.sidecar(), indent=2) + "\n")
