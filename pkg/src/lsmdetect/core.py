"""Grid fields, orthonormal bases, linear convolution and the binary grid format."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import fftconvolve

__all__ = [
    "GridField",
    "BasisSet",
    "GridBox",
    "GridFormatError",
    "as_field",
    "convolve_linear",
    "convolve_direct",
    "gram_schmidt",
    "read_grid",
    "write_grid",
]

ORTHONORMAL_TOL = 1e-10

_MAGIC = b"SDGF"
_VERSION = 1
_HEADER = struct.Struct("<4sHH")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridField:
    """Real field on a unit-spaced grid.

    ``origin`` holds the grid coordinate of array index 0 along every axis,
    so that ``data[i]`` is the value at grid point ``origin + i``.
    """

    data: np.ndarray
    origin: tuple[int, ...] = field(default=())

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim == 0 or data.size == 0:
            raise ValueError("GridField needs a non-empty array with ndim >= 1")
        if not np.all(np.isfinite(data)):
            raise ValueError("GridField values must be finite")
        origin = tuple(int(o) for o in self.origin) if self.origin else (0,) * data.ndim
        if len(origin) != data.ndim:
            raise ValueError(f"origin has {len(origin)} entries, field has ndim {data.ndim}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "origin", origin)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def value_at(self, point: Sequence[int]) -> float:
        """Value at grid coordinate ``point`` (not array index)."""
        idx = tuple(int(p) - o for p, o in zip(point, self.origin))
        if any(i < 0 or i >= n for i, n in zip(idx, self.shape)):
            raise IndexError(f"grid point {tuple(point)} outside field")
        return float(self.data[idx])

    def coordinates(self, flat_index: int) -> tuple[int, ...]:
        idx = np.unravel_index(int(flat_index), self.shape)
        return tuple(int(i) + o for i, o in zip(idx, self.origin))


def as_field(x) -> GridField:
    if isinstance(x, GridField):
        return x
    return GridField(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class BasisSet:
    """``M`` orthonormal functions sampled on a ``B**d`` support grid.

    ``functions`` has shape ``(M, B, ..., B)``. Array index ``k`` along an
    axis corresponds to the offset ``k - B // 2`` from the object center.
    """

    functions: np.ndarray

    def __post_init__(self):
        fn = _frozen(self.functions)
        if fn.ndim < 2:
            raise ValueError("functions must have shape (M, B, ..., B)")
        side = fn.shape[1]
        if any(s != side for s in fn.shape[1:]):
            raise ValueError(f"support must be a hypercube, got {fn.shape[1:]}")
        if fn.shape[0] < 1:
            raise ValueError("basis needs at least one function")
        if not np.all(np.isfinite(fn)):
            raise ValueError("basis functions must be finite")
        flat = fn.reshape(fn.shape[0], -1)
        gram = flat @ flat.T
        err = np.max(np.abs(gram - np.eye(fn.shape[0])))
        if err > ORTHONORMAL_TOL:
            raise ValueError(f"basis is not orthonormal (max Gram deviation {err:.3g})")
        object.__setattr__(self, "functions", fn)

    @property
    def M(self) -> int:
        return self.functions.shape[0]

    @property
    def support(self) -> int:
        return self.functions.shape[1]

    @property
    def ndim(self) -> int:
        return self.functions.ndim - 1

    @property
    def center(self) -> int:
        """Array index of the zero offset along each axis."""
        return self.support // 2

    def gram(self) -> np.ndarray:
        flat = self.functions.reshape(self.M, -1)
        return flat @ flat.T

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.functions.shape, dtype="<u8").tobytes())
        h.update(self.functions.astype("<f8").tobytes())
        return h.hexdigest()[:16]

    def as_field(self) -> GridField:
        return GridField(self.functions)

    @classmethod
    def from_field(cls, f: GridField) -> "BasisSet":
        return cls(f.data)


@dataclass(frozen=True)
class GridBox:
    """Axis-aligned hypercube of side ``side`` centered at an integer point."""

    center: tuple[int, ...]
    side: float
    closed: bool = True

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError("box side must be positive")
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))

    @property
    def half_extent(self) -> int:
        """Largest integer offset ``k`` (per axis) that lies inside the box."""
        h = self.side / 2.0
        k = int(np.floor(h))
        if not self.closed and k == h:
            k -= 1
        return k

    def ranges(self) -> list[tuple[int, int]]:
        """Inclusive integer coordinate range per axis."""
        k = self.half_extent
        return [(c - k, c + k) for c in self.center]


def convolve_direct(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Full linear convolution by explicit summation over ``g``'s support."""
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    out = np.zeros(tuple(a + b - 1 for a, b in zip(f.shape, g.shape)))
    for idx in np.ndindex(*g.shape):
        sl = tuple(slice(i, i + n) for i, n in zip(idx, f.shape))
        out[sl] += g[idx] * f
    return out


def convolve_linear(f, g) -> GridField:
    """Full linear convolution ``(f * g)(t) = sum_s f(s) g(t - s)``.

    The output origin is ``f.origin + g.origin`` so grid coordinates compose
    the way the continuous convolution does.
    """
    f, g = as_field(f), as_field(g)
    if f.ndim != g.ndim:
        raise ValueError(f"dimension mismatch: {f.ndim} vs {g.ndim}")
    if any(b > a for a, b in zip(f.shape, g.shape)):
        raise ValueError(f"kernel shape {g.shape} exceeds field shape {f.shape}")
    out = fftconvolve(f.data, g.data, mode="full")
    return GridField(out, tuple(a + b for a, b in zip(f.origin, g.origin)))


def gram_schmidt(templates: Iterable, tol: float = 1e-8) -> BasisSet:
    """Orthonormalize templates with re-orthogonalized modified Gram-Schmidt.

    Templates whose residual norm falls below ``tol`` times the largest
    template norm are dropped.
    """
    arrays = [as_field(t).data for t in templates]
    if not arrays:
        raise ValueError("no templates given")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ValueError("templates have inconsistent shapes")
    if any(s != shape[0] for s in shape):
        raise ValueError(f"templates must be hypercubes, got {shape}")
    vecs = np.stack([a.ravel() for a in arrays])
    scale = np.max(np.linalg.norm(vecs, axis=1))
    if scale == 0.0 or not np.isfinite(scale):
        raise ValueError("all templates are numerically zero")
    cutoff = tol * scale

    basis: list[np.ndarray] = []
    for v in vecs:
        w = v.copy()
        for _ in range(2):  # second sweep restores orthogonality lost to cancellation
            for q in basis:
                w -= (q @ w) * q
        nrm = np.linalg.norm(w)
        if nrm <= cutoff:
            continue
        basis.append(w / nrm)
    if not basis:
        raise ValueError("all templates are numerically zero")
    return BasisSet(np.stack(basis).reshape((len(basis),) + shape))


class GridFormatError(ValueError):
    pass


def write_grid(f, path) -> None:
    """Write a field as ``SDGF``: magic, u16 version, u16 ndim, u64 shape, f64 payload."""
    f = as_field(f)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, f.ndim))
        fh.write(np.asarray(f.shape, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(f.data, dtype="<f8").tobytes())


def read_grid(path) -> GridField:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise GridFormatError("bad magic")
    if len(raw) < _HEADER.size:
        raise GridFormatError("truncated header")
    _, version, ndim = _HEADER.unpack_from(raw)
    if version != _VERSION:
        raise GridFormatError(f"unsupported version {version}")
    if ndim < 1:
        raise GridFormatError("ndim must be positive")
    shape_end = _HEADER.size + 8 * ndim
    if len(raw) < shape_end:
        raise GridFormatError("truncated header")
    shape = tuple(int(s) for s in np.frombuffer(raw, dtype="<u8", count=ndim, offset=_HEADER.size))
    payload = len(raw) - shape_end
    if payload % 8:
        raise GridFormatError("truncated payload")
    if payload // 8 != int(np.prod(shape)):
        raise GridFormatError("payload size mismatch")
    data = np.frombuffer(raw, dtype="<f8", offset=shape_end).reshape(shape)
    return GridField(data.astype(np.float64))
