"""Null calibration: stationary Gaussian noise, box max-statistics and p-value tables."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import BasisSet, GridBox, GridField, as_field, read_grid, write_grid
from .scoremap import basis_correlations

__all__ = [
    "NoiseModel",
    "STATISTICS",
    "sample_noise_field",
    "noise_filter_1d",
    "max_statistic",
    "box_points",
    "patch_side",
    "CalibrationTable",
    "build_table",
    "build_tables",
    "p_value",
]

STATISTICS = ("tilde_z", "s_z")
NOISE_KINDS = ("gaussian_kernel", "white")
_CHUNK = 64


@dataclass(frozen=True)
class NoiseModel:
    """Centered stationary Gaussian noise.

    ``gaussian_kernel`` has covariance ``sigma**2 * exp(-2 |x - y|**2 / length_scale**2)``
    on the integer lattice; ``white`` is i.i.d. with variance ``sigma**2``.
    """

    kind: str = "gaussian_kernel"
    sigma: float = 1.0
    length_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unsupported noise kind {self.kind!r}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")

    def covariance(self, lag: Sequence[int]) -> float:
        lag = np.asarray(lag, dtype=np.float64)
        if self.kind == "white":
            return float(self.sigma**2 * np.all(lag == 0))
        return float(self.sigma**2 * np.exp(-2.0 * np.sum(lag**2) / self.length_scale**2))

    def with_sigma(self, sigma: float) -> "NoiseModel":
        return NoiseModel(self.kind, float(sigma), self.length_scale, self.seed)

    def with_seed(self, seed: int) -> "NoiseModel":
        return NoiseModel(self.kind, self.sigma, self.length_scale, int(seed))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_patches(cls, patches, seed: int = 0) -> "NoiseModel":
        """Fit an isotropic model to background (object-free) patches.

        Variance comes from the pooled second moment; the length scale is
        matched to the pooled lag-1 correlation. A correlation within two
        standard errors of zero yields a white model.
        """
        arrays = [np.asarray(as_field(p).data, dtype=np.float64) for p in patches]
        if not arrays:
            raise ValueError("no patches given")
        arrays = [a - a.mean() for a in arrays]
        n = sum(a.size for a in arrays)
        var = sum(float(np.sum(a * a)) for a in arrays) / n
        if not var > 0:
            raise ValueError("patches have zero variance")
        num, cnt = 0.0, 0
        for a in arrays:
            for ax in range(a.ndim):
                lo = np.take(a, np.arange(a.shape[ax] - 1), axis=ax)
                hi = np.take(a, np.arange(1, a.shape[ax]), axis=ax)
                num += float(np.sum(lo * hi))
                cnt += lo.size
        rho = num / cnt / var
        if rho <= 2.0 / np.sqrt(cnt):
            return cls("white", float(np.sqrt(var)), 1.0, seed)
        rho = min(rho, 1.0 - 1e-12)
        return cls("gaussian_kernel", float(np.sqrt(var)), float(np.sqrt(-2.0 / np.log(rho))), seed)


@lru_cache(maxsize=32)
def _filter_1d(length_scale: float) -> np.ndarray:
    n = 64
    while n < 64 * length_scale + 64:
        n *= 2
    k = np.arange(n)
    k = np.minimum(k, n - k).astype(np.float64)
    spectrum = np.fft.fft(np.exp(-2.0 * k**2 / length_scale**2)).real
    h = np.fft.fftshift(np.fft.ifft(np.sqrt(np.clip(spectrum, 0.0, None))).real)
    mid = n // 2
    tiny = 1e-16 * abs(h[mid])
    half = next((m for m in range(mid) if np.all(np.abs(h[mid + m + 1 :]) <= tiny)), mid - 1)
    taps = h[mid - half : mid + half + 1].copy()
    taps.setflags(write=False)
    return taps


def noise_filter_1d(model: NoiseModel) -> np.ndarray:
    """Symmetric 1-D filter whose discrete autocorrelation is the unit-variance kernel.

    The d-dimensional kernel is separable, so filtering white noise with this
    filter along every axis reproduces it exactly up to truncation.
    """
    if model.kind == "white":
        return np.ones(1)
    return _filter_1d(float(model.length_scale))


def _stream_rng(seed: int, stream_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream_index),)))


def _filter_valid(w: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    half = len(taps) // 2
    out = ndimage.correlate1d(w, taps, axis=axis, mode="constant")
    keep = [slice(None)] * w.ndim
    keep[axis] = slice(half, w.shape[axis] - half)
    return out[tuple(keep)]


def _sample_array(model: NoiseModel, shape: tuple[int, ...], stream_index: int) -> np.ndarray:
    rng = _stream_rng(model.seed, stream_index)
    taps = noise_filter_1d(model)
    margin = len(taps) - 1
    w = rng.standard_normal(tuple(s + margin for s in shape))
    if margin:
        for ax in range(len(shape)):
            w = _filter_valid(w, taps, ax)
    return model.sigma * w


def sample_noise_field(model: NoiseModel, shape: Sequence[int], stream_index: int = 0) -> GridField:
    """One realization of the noise on a grid of ``shape``.

    The stream is derived from ``(model.seed, stream_index)`` only, so any
    execution order reproduces the same field bit for bit.
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ValueError(f"invalid shape {shape}")
    return GridField(_sample_array(model, shape, stream_index))


def _statistic(corr: np.ndarray, kind: str, M: int, axis: int) -> np.ndarray:
    sq = corr * corr
    if kind == "tilde_z":
        return M * sq.max(axis=axis)
    if kind == "s_z":
        return sq.sum(axis=axis)
    raise ValueError(f"unknown statistic {kind!r}")


def max_statistic(z, basis: BasisSet, kind: str, box: GridBox) -> float:
    """Maximum of the chosen statistic over the grid points of ``box``.

    ``tilde_z`` is ``M * max_j (z * psi_j~)**2``; ``s_z`` is ``sum_j (z * psi_j~)**2``.
    """
    z = as_field(z)
    corr = basis_correlations(z.data, basis)
    origin = tuple(o + basis.center for o in z.origin)
    sl = []
    for (lo, hi), o, n in zip(box.ranges(), origin, corr.shape[1:]):
        if lo < o or hi >= o + n:
            raise ValueError("box exceeds the valid region")
        sl.append(slice(lo - o, hi - o + 1))
    stat = _statistic(corr[(slice(None),) + tuple(sl)], kind, basis.M, axis=0)
    return float(stat.max())


def box_points(r: float) -> int:
    """Grid points per axis in the closed box of side ``r / 2`` centered on a grid point."""
    return 2 * int(np.floor(r / 4.0)) + 1


def patch_side(r: float, support: int) -> int:
    """Noise patch side whose valid correlation region is exactly the box."""
    return box_points(r) + support - 1


@dataclass(frozen=True)
class CalibrationTable:
    """Sorted Monte Carlo samples of the box max-statistic under the null."""

    kind: str
    samples: np.ndarray
    box_side: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in STATISTICS:
            raise ValueError(f"unknown statistic {self.kind!r}")
        s = np.sort(np.asarray(self.samples, dtype=np.float64).ravel())
        if s.size == 0:
            raise ValueError("calibration table is empty")
        if s[0] < 0:
            raise ValueError("max-statistics must be nonnegative")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def n_sim(self) -> int:
        return int(self.samples.size)

    def p_value(self, u):
        """Fraction of samples strictly greater than ``u``."""
        u = np.asarray(u, dtype=np.float64)
        above = self.n_sim - np.searchsorted(self.samples, u, side="right")
        p = above / self.n_sim
        return float(p) if p.ndim == 0 else p

    def threshold(self, level: float) -> float:
        """Smallest sample ``u`` with ``p_value(u) <= level``."""
        if level < 1.0 / self.n_sim:
            raise ValueError("calibration table too small for requested level")
        p = self.p_value(self.samples)
        return float(self.samples[np.argmax(p <= level)])

    def scaled(self, factor: float) -> "CalibrationTable":
        """Table for noise rescaled by ``sqrt(factor)`` (statistics are quadratic)."""
        meta = dict(self.meta, scale=self.meta.get("scale", 1.0) * factor)
        return CalibrationTable(self.kind, self.samples * factor, self.box_side, meta)

    def save(self, path) -> Path:
        path = Path(path)
        write_grid(GridField(self.samples), path)
        sidecar = path.with_name(path.name + ".json")
        info = dict(self.meta, kind=self.kind, box_side=self.box_side, n_sim=self.n_sim)
        sidecar.write_text(json.dumps(info, indent=2, sort_keys=True))
        return sidecar

    @classmethod
    def load(cls, path) -> "CalibrationTable":
        path = Path(path)
        sidecar = path.with_name(path.name + ".json")
        info = json.loads(sidecar.read_text())
        samples = read_grid(path).data.ravel()
        if info.get("n_sim") != samples.size:
            raise ValueError("sidecar n_sim does not match table length")
        kind = info.pop("kind")
        box_side = float(info.pop("box_side"))
        info.pop("n_sim")
        return cls(kind, samples, box_side, info)


def p_value(table: CalibrationTable, u):
    return table.p_value(u)


def _chunk_stats(model, basis, side, kinds, start, stop) -> np.ndarray:
    shape = (side,) * basis.ndim
    patches = np.stack([_sample_array(model, shape, i) for i in range(start, stop)])
    corr = basis_correlations(patches, basis)
    flat = corr.reshape(corr.shape[:2] + (-1,))
    return np.stack([_statistic(flat, k, basis.M, axis=1).max(axis=1) for k in kinds])


def build_tables(
    model: NoiseModel,
    basis: BasisSet,
    r: float,
    n_sim: int,
    kinds: Sequence[str] = STATISTICS,
    n_jobs: int | None = None,
) -> dict[str, CalibrationTable]:
    """Tables for several statistics computed from the same noise draws.

    Draw ``i`` uses stream ``i`` of ``model.seed``; chunking is fixed, so the
    result does not depend on ``n_jobs``.
    """
    n_sim = int(n_sim)
    if n_sim < 1:
        raise ValueError("n_sim must be at least 1")
    for k in kinds:
        if k not in STATISTICS:
            raise ValueError(f"unknown statistic {k!r}")
    side = patch_side(r, basis.support)
    bounds = [(s, min(s + _CHUNK, n_sim)) for s in range(0, n_sim, _CHUNK)]

    def work(b):
        return _chunk_stats(model, basis, side, tuple(kinds), *b)

    if n_jobs is not None and n_jobs > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    stats = np.concatenate(parts, axis=1)
    meta = {
        "r": float(r),
        "seed": int(model.seed),
        "noise": model.to_dict(),
        "basis": basis.checksum(),
        "support": basis.support,
        "M": basis.M,
    }
    return {k: CalibrationTable(k, stats[i], r / 2.0, dict(meta)) for i, k in enumerate(kinds)}


def build_table(model, basis, r, n_sim, kind="tilde_z", n_jobs=None) -> CalibrationTable:
    return build_tables(model, basis, r, n_sim, (kind,), n_jobs)[kind]
