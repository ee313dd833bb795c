"""Deterministic synthetic plume scenes.

Background pixels are ``mean + L z`` where ``z`` is white Gaussian noise,
smoothed spatially with a periodic Gaussian kernel (normalized so the
per-band variance is unchanged) and mixed spectrally by the Cholesky factor
``L`` of a fixed band covariance.  Noise for frame ``t`` comes from a Philox
stream keyed by ``(seed, t)`` and consumed in (row, col, band) order, so a
frame depends only on the scene description, the seed and its own index.

A plume adds ``strength[t] * exp(-|p - center|^2 / (2 sigma^2)) * s`` to
pixel ``p`` of frame ``t``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Optional

import numpy as np
from scipy.interpolate import make_interp_spline

from .cube import CubeSequence, HyperCube
from .detection import Signature
from .errors import DimensionError, HyperCSError

__all__ = [
    "BackgroundSpec",
    "PlumeSpec",
    "SceneSpec",
    "default_mean_spectrum",
    "band_covariance",
    "signature_preset",
    "SIGNATURE_PRESETS",
    "gen_background",
    "inject_plume",
    "plume_mask",
    "generate_scene",
    "preset_scenarios",
]

# Gaussian peaks as (center, width) in fractions of the band axis, unit height.
SIGNATURE_PRESETS = {
    "twin_peak": ((0.30, 0.06), (0.72, 0.05)),
    "triple_peak": ((0.15, 0.04), (0.50, 0.07), (0.85, 0.04)),
}


def signature_preset(name: str, b: int) -> Signature:
    if name not in SIGNATURE_PRESETS:
        raise HyperCSError(f"unknown signature preset {name!r}; choose from {sorted(SIGNATURE_PRESETS)}")
    x = (np.arange(b) + 0.5) / b
    s = np.zeros(b)
    for c, w in SIGNATURE_PRESETS[name]:
        s += np.exp(-0.5 * ((x - c) / w) ** 2)
    return Signature(s, name)


def default_mean_spectrum(b: int, seed: int = 0, level: float = 100.0) -> np.ndarray:
    """Smooth positive spectrum: a cubic spline through a few seeded knots."""
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 2**63], dtype=np.uint64)))
    nknots = min(max(b, 1), 5)
    if b == 1:
        return np.array([level])
    knots_x = np.linspace(0.0, 1.0, nknots)
    knots_y = level * (1.0 + 0.2 * rng.uniform(-1.0, 1.0, nknots))
    spline = make_interp_spline(knots_x, knots_y, k=min(3, nknots - 1))
    return spline(np.linspace(0.0, 1.0, b))


def band_covariance(b: int, variance: float, corr_length: float, white_fraction: float) -> np.ndarray:
    """Per-band variance ``variance``; a squared-exponential correlation plus a white part."""
    idx = np.arange(b)
    smooth = np.exp(-0.5 * ((idx[:, None] - idx[None, :]) / max(corr_length, 1e-12)) ** 2)
    return variance * ((1.0 - white_fraction) * smooth + white_fraction * np.eye(b))


@dataclass(frozen=True)
class BackgroundSpec:
    mean: Optional[tuple] = None
    variance: float = 1.0
    smoothing: float = 1.0
    corr_length: float = 3.0
    white_fraction: float = 0.2


@dataclass(frozen=True)
class PlumeSpec:
    center: tuple = (32.0, 32.0)
    sigma: float = 6.0
    signature: str = "twin_peak"
    strength: tuple = ()


@dataclass(frozen=True)
class SceneSpec:
    """Scene dimensions, seed, background texture and plume schedule."""

    n1: int = 64
    n2: int = 64
    b: int = 20
    frames: int = 120
    seed: int = 0
    background: BackgroundSpec = field(default_factory=BackgroundSpec)
    plume: PlumeSpec = field(default_factory=PlumeSpec)
    name: str = "custom"
    notes: str = ""

    def __post_init__(self):
        if min(self.n1, self.n2, self.b, self.frames) < 1:
            raise DimensionError("scene dimensions and frame count must be >= 1")
        if self.plume.sigma <= 0:
            raise HyperCSError("plume sigma must be positive")
        if len(self.plume.strength) not in (0, self.frames):
            raise HyperCSError(
                f"strength schedule has {len(self.plume.strength)} entries for {self.frames} frames"
            )
        if self.background.mean is not None and len(self.background.mean) != self.b:
            raise DimensionError("background mean length does not match band count")
        if self.background.variance < 0 or self.background.smoothing < 0:
            raise HyperCSError("background variance and smoothing must be >= 0")
        if not 0.0 <= self.background.white_fraction <= 1.0:
            raise HyperCSError("white_fraction must lie in [0, 1]")

    @property
    def strength(self) -> np.ndarray:
        if not self.plume.strength:
            return np.zeros(self.frames)
        return np.asarray(self.plume.strength, dtype=np.float64)

    def mean_spectrum(self) -> np.ndarray:
        if self.background.mean is not None:
            return np.asarray(self.background.mean, dtype=np.float64)
        return default_mean_spectrum(self.b, self.seed)

    def signature(self) -> Signature:
        return signature_preset(self.plume.signature, self.b)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["plume"]["strength"] = [float(v) for v in self.plume.strength]
        d["plume"]["center"] = [float(v) for v in self.plume.center]
        if self.background.mean is not None:
            d["background"]["mean"] = [float(v) for v in self.background.mean]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        bg = dict(d.pop("background", {}))
        if bg.get("mean") is not None:
            bg["mean"] = tuple(float(v) for v in bg["mean"])
        pl = dict(d.pop("plume", {}))
        if "center" in pl:
            pl["center"] = tuple(float(v) for v in pl["center"])
        if "strength" in pl:
            pl["strength"] = tuple(float(v) for v in pl["strength"])
        elif "schedule" in pl:
            pl["strength"] = tuple(_expand_schedule(pl.pop("schedule"), int(d.get("frames", 120))))
        try:
            return cls(background=BackgroundSpec(**bg), plume=PlumeSpec(**pl), **d)
        except TypeError as exc:
            raise HyperCSError(f"invalid scene description: {exc}") from exc


def _expand_schedule(segments, frames: int) -> list:
    """Expand ``[{"start", "stop", "strength"}, ...]`` (inclusive ranges) to a per-frame list."""
    out = [0.0] * frames
    for seg in segments:
        for t in range(int(seg["start"]), int(seg["stop"]) + 1):
            if 0 <= t < frames:
                out[t] = float(seg["strength"])
    return out


def _smoothing_kernel_fft(n1: int, n2: int, radius: float) -> Optional[np.ndarray]:
    if radius <= 0:
        return None
    dr = np.minimum(np.arange(n1), n1 - np.arange(n1)).astype(float)
    dc = np.minimum(np.arange(n2), n2 - np.arange(n2)).astype(float)
    k = np.exp(-(dr[:, None] ** 2 + dc[None, :] ** 2) / (2.0 * radius**2))
    k /= np.sqrt(np.sum(k**2))
    return np.fft.rfft2(k)


def _frame_noise(spec: SceneSpec, seed: int, t: int, kernel, lower) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, t], dtype=np.uint64)))
    z = rng.standard_normal((spec.n1, spec.n2, spec.b))
    if kernel is not None:
        z = np.fft.irfft2(np.fft.rfft2(z, axes=(0, 1)) * kernel[:, :, None], s=(spec.n1, spec.n2), axes=(0, 1))
    return z @ lower.T


def gen_background(spec: SceneSpec, seed: Optional[int] = None) -> CubeSequence:
    """Plume-free frames for ``spec``; identical inputs give bit-identical output."""
    seed = spec.seed if seed is None else int(seed)
    if seed < 0:
        raise HyperCSError("seed must be non-negative")
    mean = spec.mean_spectrum()
    bgs = spec.background
    frames = []
    if bgs.variance == 0:
        base = np.broadcast_to(mean, (spec.n1, spec.n2, spec.b))
        return CubeSequence(tuple(HyperCube(base) for _ in range(spec.frames)))
    cov = band_covariance(spec.b, bgs.variance, bgs.corr_length, bgs.white_fraction)
    lower = np.linalg.cholesky(cov + 1e-12 * bgs.variance * np.eye(spec.b))
    kernel = _smoothing_kernel_fft(spec.n1, spec.n2, bgs.smoothing)
    for t in range(spec.frames):
        frames.append(HyperCube(mean + _frame_noise(spec, seed, t, kernel, lower)))
    return CubeSequence(tuple(frames))


def plume_mask(spec: SceneSpec) -> np.ndarray:
    """Spatial plume profile ``exp(-|p - center|^2 / (2 sigma^2))`` on the pixel grid."""
    r0, c0 = spec.plume.center
    rr = np.arange(spec.n1)[:, None] - r0
    cc = np.arange(spec.n2)[None, :] - c0
    return np.exp(-(rr**2 + cc**2) / (2.0 * spec.plume.sigma**2))


def inject_plume(cubes: CubeSequence, sig: Signature, spec: SceneSpec) -> CubeSequence:
    if sig.b != cubes.shape[2]:
        raise DimensionError(f"signature has {sig.b} bands, cubes have {cubes.shape[2]}")
    if cubes.shape[:2] != (spec.n1, spec.n2) or len(cubes) != spec.frames:
        raise DimensionError("cube sequence does not match the scene spec")
    profile = plume_mask(spec)[:, :, None] * sig.s[None, None, :]
    out = []
    for t, frame in enumerate(cubes):
        a = spec.strength[t]
        out.append(frame if a == 0 else HyperCube(frame.data + a * profile))
    return CubeSequence(tuple(out))


def generate_scene(spec: SceneSpec, seed: Optional[int] = None) -> tuple[CubeSequence, Signature]:
    sig = spec.signature()
    return inject_plume(gen_background(spec, seed), sig, spec), sig


def preset_scenarios() -> dict:
    """Named scene presets shipped as JSON files in ``hypercs/presets``."""
    out = {}
    for entry in sorted(resources.files("hypercs.presets").iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json"):
            spec = SceneSpec.from_dict(json.loads(entry.read_text()))
            out[spec.name] = spec
    return out
