"""Score maps ``S(t) = sum_j (f * psi_j~)(t)**2`` and their decomposition."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .core import BasisSet, GridField, as_field

__all__ = [
    "basis_correlations",
    "score_map",
    "ScoreDecomposition",
    "score_decompose",
    "mixed_term_constant",
    "mixed_term_bound_check",
]


def basis_correlations(data: np.ndarray, basis: BasisSet) -> np.ndarray:
    """Correlate ``data`` with every basis function over the valid region.

    ``data`` may carry leading batch axes; the last ``basis.ndim`` axes are
    spatial. Returns shape ``batch + (M,) + valid``, where valid index ``i``
    is the grid point ``i + basis.center`` of the input array.
    """
    data = np.asarray(data, dtype=np.float64)
    d = basis.ndim
    spatial = data.shape[-d:]
    if data.ndim < d or any(n < basis.support for n in spatial):
        raise ValueError(
            f"field of shape {spatial} is smaller than the basis support {basis.support}"
        )
    flipped = basis.functions[(slice(None),) + (slice(None, None, -1),) * d]
    batch = data.shape[:-d]
    x = data.reshape(batch + (1,) + spatial)
    k = flipped.reshape((1,) * len(batch) + flipped.shape)
    axes = tuple(range(x.ndim - d, x.ndim))
    return fftconvolve(x, k, mode="valid", axes=axes)


def score_map(y, basis: BasisSet) -> GridField:
    """Score map of ``y`` restricted to points where the kernel lies inside ``y``."""
    y = as_field(y)
    if y.ndim != basis.ndim:
        raise ValueError(f"field ndim {y.ndim} does not match basis ndim {basis.ndim}")
    corr = basis_correlations(y.data, basis)
    s = np.einsum("j...,j...->...", corr, corr)
    return GridField(s, tuple(o + basis.center for o in y.origin))


@dataclass(frozen=True)
class ScoreDecomposition:
    s_y: GridField
    s_x: GridField
    s_z: GridField
    h: GridField

    def residual(self) -> float:
        r = self.s_y.data - (self.s_x.data + self.s_z.data + self.h.data)
        return float(np.max(np.abs(r)))


def score_decompose(x, z, basis: BasisSet) -> ScoreDecomposition:
    """Split ``S^y`` for ``y = x + z`` into clean, noise and mixed parts."""
    x, z = as_field(x), as_field(z)
    if x.shape != z.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {z.shape}")
    origin = tuple(o + basis.center for o in x.origin)
    cx = basis_correlations(x.data, basis)
    cz = basis_correlations(z.data, basis)
    y = GridField(x.data + z.data, x.origin)
    return ScoreDecomposition(
        s_y=score_map(y, basis),
        s_x=GridField(np.einsum("j...,j...->...", cx, cx), origin),
        s_z=GridField(np.einsum("j...,j...->...", cz, cz), origin),
        h=GridField(2.0 * np.einsum("j...,j...->...", cx, cz), origin),
    )


def mixed_term_constant(M: int, d: int) -> float:
    return 2.0 * M * (3**d - 1)


def _max_norm_map(decomp: ScoreDecomposition, objects, support: int) -> np.ndarray:
    """Largest ``||a_i||`` among objects with ``||tau_i - t||_inf < B``, per valid t."""
    shape = decomp.h.shape
    origin = decomp.h.origin
    out = np.zeros(shape)
    for obj in objects:
        norm = float(np.linalg.norm(obj.coefficients))
        sl = []
        for c, o, n in zip(obj.center, origin, shape):
            lo = max(c - support + 1 - o, 0)
            hi = min(c + support - 1 - o + 1, n)
            if lo >= hi:
                break
            sl.append(slice(lo, hi))
        else:
            view = out[tuple(sl)]
            np.maximum(view, norm, out=view)
    return out


def mixed_term_bound_check(decomp: ScoreDecomposition, scene, basis: BasisSet) -> bool:
    """Check ``|H(t)| <= 2M(3^d - 1) max_{i in I(t)} ||a_i|| sqrt(S^z(t))`` everywhere."""
    c = mixed_term_constant(basis.M, basis.ndim)
    max_norm = _max_norm_map(decomp, scene.objects, basis.support)
    bound = c * max_norm * np.sqrt(decomp.s_z.data)
    slack = 1e-12 * (1.0 + bound)
    return bool(np.all(np.abs(decomp.h.data) <= bound + slack))
