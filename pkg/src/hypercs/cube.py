"""Hyperspectral cube data model and the HSC1 container format.

A cube holds one time frame as an ``(n1, n2, b)`` array of float64 radiance
values.  Most numerical code works on the pixel-by-band matrix view
``X`` of shape ``(n1 * n2, b)``; pixels are flattened row-major so that
``X[r * n2 + c, j] == data[r, c, j]``.

On disk a cube is stored as::

    b"HSC1" | u32 n1 | u32 n2 | u32 b | n1*n2*b float64 values

all little-endian, payload band-major (band 0 complete in row-major order,
then band 1, ...).  A :class:`CubeSequence` is a directory of
``frame_%04d.hsc`` files plus ``manifest.json``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, FormatError

__all__ = [
    "HyperCube",
    "CubeSequence",
    "flatten_band",
    "unflatten_band",
    "crop_fov",
    "read_cube",
    "write_cube",
    "read_sequence",
    "write_sequence",
    "MAGIC",
]

MAGIC = b"HSC1"
_HEADER = struct.Struct("<4sIII")
# Refuse headers that would describe more than 16 GiB of payload.
_MAX_VALUES = 2**31


class HyperCube:
    """One immutable hyperspectral frame.

    Parameters
    ----------
    data : array_like, shape (n1, n2, b)
        Radiance values.  Copied, converted to float64 and made read-only.
    """

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim != 3:
            raise DimensionError(f"cube data must be 3-D (n1, n2, b), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise DimensionError(f"cube dimensions must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DimensionError("cube contains non-finite values")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def from_matrix(cls, X, n1: int, n2: int) -> "HyperCube":
        """Build a cube from its ``(n1 * n2, b)`` pixel-by-band matrix."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] != n1 * n2:
            raise DimensionError(f"matrix of shape {X.shape} does not match n1*n2 = {n1 * n2}")
        return cls(X.reshape(n1, n2, X.shape[1]))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def n1(self) -> int:
        return self._data.shape[0]

    @property
    def n2(self) -> int:
        return self._data.shape[1]

    @property
    def b(self) -> int:
        return self._data.shape[2]

    @property
    def n(self) -> int:
        return self.n1 * self.n2

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._data.shape

    @property
    def matrix(self) -> np.ndarray:
        """Read-only ``(n, b)`` view with pixels in row-major order."""
        return self._data.reshape(self.n, self.b)

    def __eq__(self, other):
        if not isinstance(other, HyperCube):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    def __hash__(self):
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self):
        return f"HyperCube(n1={self.n1}, n2={self.n2}, b={self.b})"


@dataclass(frozen=True)
class CubeSequence:
    """Ordered frames sharing one ``(n1, n2, b)`` shape; frame ``i`` is time index ``i``."""

    frames: tuple

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise DimensionError("a cube sequence needs at least one frame")
        shape = frames[0].shape
        for i, f in enumerate(frames):
            if not isinstance(f, HyperCube):
                raise TypeError(f"frame {i} is not a HyperCube")
            if f.shape != shape:
                raise DimensionError(f"frame {i} has shape {f.shape}, expected {shape}")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[HyperCube]:
        return iter(self.frames)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return CubeSequence(self.frames[i])
        return self.frames[i]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames[0].shape

    def stack(self) -> np.ndarray:
        """All frames as one ``(frames, n1, n2, b)`` array."""
        return np.stack([f.data for f in self.frames])


def flatten_band(cube: HyperCube, band: int) -> np.ndarray:
    """Return band ``band`` as a length ``n1*n2`` vector in row-major pixel order."""
    if not 0 <= band < cube.b:
        raise DimensionError(f"band {band} out of range [0, {cube.b})")
    return cube.data[:, :, band].reshape(-1).copy()


def unflatten_band(v, n1: int, n2: int) -> np.ndarray:
    """Inverse of :func:`flatten_band`: reshape a length-n vector to ``(n1, n2)``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n1 * n2,):
        raise DimensionError(f"vector of shape {v.shape} cannot be unflattened to {n1}x{n2}")
    return v.reshape(n1, n2).copy()


def crop_fov(cube: HyperCube, origin: Sequence[int] = (0, 0), size: Sequence[int] = (64, 64)) -> HyperCube:
    """Cut a spatial window out of ``cube``, keeping every band."""
    r0, c0 = (int(x) for x in origin)
    h, w = (int(x) for x in size)
    if h < 1 or w < 1 or r0 < 0 or c0 < 0 or r0 + h > cube.n1 or c0 + w > cube.n2:
        raise DimensionError(
            f"window origin={tuple(origin)} size={tuple(size)} exceeds cube of {cube.n1}x{cube.n2}"
        )
    return HyperCube(cube.data[r0:r0 + h, c0:c0 + w, :])


def write_cube(cube: HyperCube, path) -> None:
    payload = np.ascontiguousarray(cube.data.transpose(2, 0, 1), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, cube.n1, cube.n2, cube.b))
        fh.write(payload.tobytes())


def read_cube(path) -> HyperCube:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for an HSC1 header")
    magic, n1, n2, b = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if min(n1, n2, b) < 1:
        raise FormatError(f"{path}: zero dimension in header ({n1}, {n2}, {b})")
    count = n1 * n2 * b
    if count > _MAX_VALUES:
        raise FormatError(f"{path}: header dimensions {n1}x{n2}x{b} overflow the size limit")
    expected = _HEADER.size + 8 * count
    if len(raw) < expected:
        raise FormatError(f"{path}: truncated payload ({len(raw)} of {expected} bytes)")
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    vals = np.frombuffer(raw, dtype="<f8", count=count, offset=_HEADER.size)
    if not np.all(np.isfinite(vals)):
        raise FormatError(f"{path}: payload contains non-finite values")
    return HyperCube(vals.reshape(b, n1, n2).transpose(1, 2, 0).astype(np.float64))


def write_sequence(seq: CubeSequence, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq):
        write_cube(frame, d / f"frame_{i:04d}.hsc")
    n1, n2, b = seq.shape
    manifest = {"frames": len(seq), "n1": n1, "n2": n2, "b": b}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return d


def read_sequence(directory) -> CubeSequence:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
        count = int(manifest["frames"])
        shape = (int(manifest["n1"]), int(manifest["n2"]), int(manifest["b"]))
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{d}: unreadable sequence manifest ({exc})") from exc
    frames = []
    for i in range(count):
        cube = read_cube(d / f"frame_{i:04d}.hsc")
        if cube.shape != shape:
            raise FormatError(f"{d}: frame {i} has shape {cube.shape}, manifest says {shape}")
        frames.append(cube)
    return CubeSequence(tuple(frames))
