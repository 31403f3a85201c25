"""Certifying the localization radius ``delta`` from basis shift overlaps.

For a basis ``psi_1..psi_M`` the overlap matrix at integer offset ``o`` is
``G(o)[k, j] = <psi_k, psi_j(. - o)>``. The clean score of a scene is a
bilinear form in the coefficients with blocks ``D = G(t - tau_i) G(t - tau_l)^T``;
``g(delta) > 0`` guarantees that noiseless peaks sit within ``delta`` of the
true centers.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .core import BasisSet

__all__ = [
    "ShiftOverlaps",
    "DMatrix",
    "d_matrix",
    "lambda_bounds",
    "operator_norm",
    "GEvaluation",
    "evaluate_g",
    "g_of_delta",
    "DeltaCertificate",
    "estimate_delta",
    "recheck_certificate",
]


class ShiftOverlaps:
    """All overlaps ``<psi_k, psi_j(. - o)>`` for ``|o|_inf < B``, computed once."""

    def __init__(self, basis: BasisSet):
        self.basis = basis
        d = basis.ndim
        psi = basis.functions
        flipped = psi[(slice(None),) + (slice(None, None, -1),) * d]
        axes = tuple(range(2, 2 + d))
        # full[k, j, o + B - 1] = sum_u psi_k(u) psi_j(u - o)
        self._full = fftconvolve(psi[:, None], flipped[None, :], mode="full", axes=axes)

    @property
    def support(self) -> int:
        return self.basis.support

    def G(self, offset: Sequence[int]) -> np.ndarray:
        offset = tuple(int(o) for o in offset)
        B = self.support
        if len(offset) != self.basis.ndim:
            raise ValueError("offset dimension does not match basis")
        if max(abs(o) for o in offset) >= B:
            return np.zeros((self.basis.M, self.basis.M))
        return self._full[(slice(None), slice(None)) + tuple(o + B - 1 for o in offset)]

    def G_many(self, offsets: np.ndarray) -> np.ndarray:
        """Stacked overlaps for offsets of shape ``(n, d)``, all with ``|o|_inf < B``."""
        idx = tuple((np.asarray(offsets) + self.support - 1).T)
        return np.moveaxis(self._full[(slice(None), slice(None)) + idx], -1, 0)


@dataclass(frozen=True)
class DMatrix:
    entries: np.ndarray
    offsets: tuple[tuple[int, ...], tuple[int, ...]]

    @property
    def is_symmetric(self) -> bool:
        e = self.entries
        return bool(np.max(np.abs(e - e.T), initial=0.0) <= 1e-12 * max(1.0, np.max(np.abs(e), initial=0.0)))


def _overlaps(basis_or_overlaps) -> ShiftOverlaps:
    if isinstance(basis_or_overlaps, ShiftOverlaps):
        return basis_or_overlaps
    return ShiftOverlaps(basis_or_overlaps)


def d_matrix(basis, offset_i: Sequence[int], offset_l: Sequence[int]) -> DMatrix:
    """``D[k, s] = sum_j <psi_k, psi_j(. - offset_i)> <psi_s, psi_j(. - offset_l)>``.

    Offsets are ``t - tau_i`` and ``t - tau_l``. The matrix is symmetric when
    the two offsets coincide.
    """
    ov = _overlaps(basis)
    Gi, Gl = ov.G(offset_i), ov.G(offset_l)
    offs = (tuple(int(o) for o in offset_i), tuple(int(o) for o in offset_l))
    return DMatrix(Gi @ Gl.T, offs)


def lambda_bounds(D) -> tuple[float, float]:
    """Smallest eigenvalue and largest absolute eigenvalue of a symmetric D."""
    e = D.entries if isinstance(D, DMatrix) else np.asarray(D, dtype=np.float64)
    if np.max(np.abs(e - e.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(e), initial=0.0)):
        raise ValueError("lambda_bounds needs a symmetric matrix; use operator_norm")
    try:
        w = np.linalg.eigvalsh(0.5 * (e + e.T))
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("eigensolver did not converge; basis is ill-conditioned") from exc
    return float(w[0]), float(np.max(np.abs(w)))


def operator_norm(D) -> float:
    """Largest singular value; equals the largest absolute eigenvalue when D is symmetric."""
    e = D.entries if isinstance(D, DMatrix) else np.asarray(D, dtype=np.float64)
    return float(np.linalg.norm(e, 2))


def _lattice(radius: int, stride: int, d: int) -> np.ndarray:
    """Points of ``stride * Z^d`` with every coordinate in ``[-radius, radius]``."""
    k = radius // stride
    axis = np.arange(-k, k + 1) * stride
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)


@dataclass
class GEvaluation:
    delta: float
    stride: int
    near_term: float
    far_term: float
    near_point: tuple[int, ...]
    far_config: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def g(self) -> float:
        return self.near_term - self.far_term


def _near_term(ov: ShiftOverlaps, delta: float, stride: int) -> tuple[float, tuple[int, ...]]:
    d = ov.basis.ndim
    pts = _lattice(ov.support - 1, stride, d)
    pts = pts[np.max(np.abs(pts), axis=1) < delta / 2.0]
    G = ov.G_many(pts)
    lam = np.linalg.eigvalsh(G @ np.swapaxes(G, 1, 2))[:, 0]
    i = int(np.argmax(lam))
    return float(lam[i]), tuple(int(v) for v in pts[i])


class _FarSearch:
    """Maximize the accumulated off-center overlap over admissible center sets.

    Centers lie within ``B`` of the origin (so they contribute at 0), outside
    ``C(0, delta)``, pairwise at least ``B + 3 delta / 2`` apart, and number
    at most ``3**d - 1``. The value of a set is the sum over ordered pairs of
    ``||G(-tau_l) G(-tau_j)^T||``, bounded above by ``(sum ||G(-tau)||)**2``.
    """

    def __init__(self, ov: ShiftOverlaps, delta: float, positions: np.ndarray):
        B = ov.support
        self.sep = B + 1.5 * delta
        # no more than floor(2(B-1)/sep) + 1 separated centers fit per axis
        per_axis = int(2 * (B - 1) // self.sep) + 1
        self.cap = min(3**ov.basis.ndim - 1, per_axis**ov.basis.ndim)
        G = ov.G_many(-positions) if len(positions) else np.zeros((0, ov.basis.M, ov.basis.M))
        sig = np.linalg.norm(G, 2, axis=(1, 2)) if len(positions) else np.zeros(0)
        order = np.argsort(-sig, kind="stable")
        self.pos = positions[order]
        self.G = G[order]
        self.sig = sig[order]
        self.best = 0.0
        self.best_set: list[int] = []
        self._rows: dict[int, np.ndarray] = {}

    def pairs(self, a: int, cand: np.ndarray) -> np.ndarray:
        """``||G_a G_c^T||`` for every ``c`` in ``cand``, memoized per row."""
        row = self._rows.get(a)
        if row is None:
            row = np.full(len(self.sig), np.nan)
            self._rows[a] = row
        need = cand[np.isnan(row[cand])]
        if len(need):
            prod = np.einsum("ik,njk->nij", self.G[a], self.G[need])
            row[need] = np.linalg.norm(prod, 2, axis=(1, 2))
        return row[cand]

    def compatible(self, c: int, cand: np.ndarray) -> np.ndarray:
        dist = np.max(np.abs(self.pos[cand] - self.pos[c]), axis=1)
        return cand[dist >= self.sep]

    def run(self) -> None:
        if len(self.sig):
            self.best = float(self.sig[0] ** 2)
            self.best_set = [0]
        self._extend([], 0.0, 0.0, np.arange(len(self.sig)))

    def _bounds(self, sum_sig: float, cand: np.ndarray, room: int) -> np.ndarray:
        s = self.sig[cand]
        cs = np.concatenate([[0.0], np.cumsum(s)])
        idx = np.arange(len(cand))
        top = cs[np.minimum(idx + 1 + room, len(cand))] - cs[idx + 1]
        return (sum_sig + s + top) ** 2

    def _extend(self, clique: list[int], sum_sig: float, value: float, cand: np.ndarray) -> None:
        if not len(cand):
            return
        room = self.cap - len(clique) - 1
        bound = self._bounds(sum_sig, cand, max(room, 0))
        # bounds are nonincreasing along cand (sorted by descending sig)
        n_alive = int(np.searchsorted(-bound, -self.best, side="left"))
        alive = cand[:n_alive]
        if not len(alive):
            return
        vals = value + self.sig[alive] ** 2
        for m in clique:
            vals = vals + 2.0 * self.pairs(m, alive)
        i = int(np.argmax(vals))
        if vals[i] > self.best:
            self.best = float(vals[i])
            self.best_set = clique + [int(alive[i])]
        if room <= 0:
            return
        for i, c in enumerate(alive):
            if bound[i] <= self.best:
                break
            nxt = self.compatible(c, cand[i + 1 :])
            if len(nxt):
                self._extend(clique + [int(c)], sum_sig + self.sig[c], float(vals[i]), nxt)


def _far_positions(B: int, delta: float, stride: int, d: int) -> np.ndarray:
    pts = _lattice(B - 1, stride, d)
    return pts[np.max(np.abs(pts), axis=1) >= delta / 2.0]


def evaluate_g(basis, delta: float, stride: int = 1) -> GEvaluation:
    """``g(delta)``: best near-center ``lambda_min`` minus worst far accumulation."""
    ov = _overlaps(basis)
    B = ov.support
    if not 1 <= delta <= 2 * B:
        raise ValueError(f"delta must lie in [1, {2 * B}]")
    stride = int(stride)
    if stride < 1:
        raise ValueError("stride must be at least 1")
    near, near_pt = _near_term(ov, delta, stride)
    search = _FarSearch(ov, delta, _far_positions(B, delta, stride, ov.basis.ndim))
    search.run()
    config = [tuple(int(v) for v in search.pos[i]) for i in search.best_set]
    return GEvaluation(float(delta), stride, near, search.best, near_pt, config)


def g_of_delta(basis, delta: float, stride: int = 1) -> float:
    return evaluate_g(basis, delta, stride).g


def config_value(ov: ShiftOverlaps, config: Sequence[Sequence[int]]) -> float:
    """Sum over ordered pairs of ``||G(-tau_l) G(-tau_j)^T||`` for one center set."""
    Gs = [ov.G([-v for v in tau]) for tau in config]
    total = 0.0
    for a, Ga in enumerate(Gs):
        for b, Gb in enumerate(Gs):
            total += operator_norm(Ga @ Gb.T)
    return total


def _admissible(config, B: int, delta: float) -> bool:
    sep = B + 1.5 * delta
    for tau in config:
        n = max(abs(v) for v in tau)
        if n >= B or n < delta / 2.0:
            return False
    for a, b in itertools.combinations(config, 2):
        if max(abs(x - y) for x, y in zip(a, b)) < sep:
            return False
    return True


def _dilated_far_term(ov: ShiftOverlaps, delta: float, config, radius: int = 1) -> float:
    """Worst admissible set within ``radius`` pixels of ``config``, per center."""
    if not config:
        return 0.0
    d = ov.basis.ndim
    B = ov.support
    moves = [np.asarray(m) for m in itertools.product(range(-radius, radius + 1), repeat=d)]
    best = 0.0
    for shift in itertools.product(moves, repeat=len(config)):
        cand = [tuple(int(v) for v in np.asarray(t) + s) for t, s in zip(config, shift)]
        if _admissible(cand, B, delta):
            best = max(best, config_value(ov, cand))
    return best


@dataclass(frozen=True)
class DeltaCertificate:
    delta: float
    g_value: float
    stride: int
    basis_id: str
    recheck_g: float = math.nan
    far_config: tuple = ()

    def save(self, path) -> None:
        info = asdict(self)
        info["far_config"] = [list(c) for c in self.far_config]
        Path(path).write_text(json.dumps(info, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "DeltaCertificate":
        info = json.loads(Path(path).read_text())
        info["far_config"] = tuple(tuple(c) for c in info.get("far_config", ()))
        return cls(**info)


def recheck_certificate(basis, cert: DeltaCertificate) -> float:
    """Recompute ``g`` at stride 1 on a one-pixel dilation of the worst far configuration."""
    ov = _overlaps(basis)
    near, _ = _near_term(ov, cert.delta, 1)
    far = _dilated_far_term(ov, cert.delta, [tuple(c) for c in cert.far_config])
    return near - far


def _delta_grid(B: int, stride: int) -> list[int]:
    grid = list(range(1, 2 * B, stride))
    if grid[-1] != 2 * B:
        grid.append(2 * B)
    return grid


def estimate_delta(basis: BasisSet, stride: int | None = None, recheck: bool = True) -> DeltaCertificate:
    """Smallest ``delta`` on the grid ``1, 1 + stride, ...`` (ending at ``2B``) with ``g > 0``.

    With ``recheck`` the certificate must also stay positive at stride 1 on
    the dilated worst configuration; otherwise the search moves on.
    ``delta = 2B`` always qualifies.
    """
    ov = ShiftOverlaps(basis)
    B = basis.support
    stride = max(1, B // 8) if stride is None else int(stride)
    if stride < 1:
        raise ValueError("stride must be at least 1")
    for delta in _delta_grid(B, stride):
        ev = evaluate_g(ov, delta, stride)
        if ev.g <= 0:
            continue
        cert = DeltaCertificate(float(delta), ev.g, stride, basis.checksum(), math.nan, tuple(ev.far_config))
        if not recheck:
            return cert
        g1 = recheck_certificate(ov, cert)
        if g1 > 0 or delta == 2 * B:
            return DeltaCertificate(cert.delta, cert.g_value, stride, cert.basis_id, g1, cert.far_config)
    raise AssertionError("unreachable: g(2B) > 0")
