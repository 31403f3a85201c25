"""Greedy candidate peaks and Bonferroni / Benjamini-Hochberg selection."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibrate import CalibrationTable
from .core import GridField, as_field

__all__ = [
    "CandidateSet",
    "DetectionResult",
    "select_candidates",
    "n_bins",
    "bonferroni_select",
    "bh_select",
    "PROCEDURES",
]

PROCEDURES = ("bonferroni", "bh")


@dataclass(frozen=True)
class CandidateSet:
    points: np.ndarray  # (m, d) grid coordinates
    scores: np.ndarray  # (m,) nonincreasing
    r: float

    def __len__(self) -> int:
        return len(self.scores)


def _erase_radius(r: float) -> int:
    # largest integer offset strictly inside the open box of side r
    return int(math.ceil(r / 2.0)) - 1


def select_candidates(s_y, r: float) -> CandidateSet:
    """Take the global maximum, erase the open box ``C(t, r)`` around it, repeat.

    Ties go to the smallest row-major index. Runs until every point is erased.
    """
    s = as_field(s_y)
    if not r >= 1:
        raise ValueError("r must be at least 1")
    values = s.data
    order = np.argsort(-values.ravel(), kind="stable")
    alive = np.ones(values.shape, dtype=bool)
    flat_alive = alive.reshape(-1)
    k = _erase_radius(r)
    picks = []
    for idx in order:
        if not flat_alive[idx]:
            continue
        picks.append(idx)
        pos = np.unravel_index(idx, values.shape)
        alive[tuple(slice(max(p - k, 0), p + k + 1) for p in pos)] = False
    picks = np.asarray(picks, dtype=np.int64)
    coords = np.stack(np.unravel_index(picks, values.shape), axis=1) + np.asarray(s.origin)
    return CandidateSet(coords.astype(np.int64), values.ravel()[picks].copy(), float(r))


def n_bins(domain_side: float, r: float, d: int) -> int:
    """Number of boxes of side ``r / 2`` covering the domain, ``ceil((2L/r)**d)``."""
    return int(math.ceil((2.0 * domain_side / r) ** d - 1e-9))


@dataclass(frozen=True)
class DetectionResult:
    candidates: CandidateSet
    p_values: np.ndarray
    procedure: str
    alpha: float
    m_l_bins: int
    threshold_u: float
    accepted: np.ndarray  # indices into candidates

    @property
    def accepted_points(self) -> np.ndarray:
        return self.candidates.points[self.accepted]

    @property
    def accepted_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.candidates), dtype=bool)
        mask[self.accepted] = True
        return mask

    def to_csv(self, path) -> None:
        d = self.candidates.points.shape[1] if len(self.candidates) else 0
        mask = self.accepted_mask
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index"] + [f"coord_{i}" for i in range(d)] + ["score", "p_value", "accepted"])
            for i, (pt, sc, p) in enumerate(zip(self.candidates.points, self.candidates.scores, self.p_values)):
                w.writerow([i, *map(int, pt), repr(float(sc)), repr(float(p)), int(mask[i])])

    @staticmethod
    def read_csv(path) -> list[dict]:
        with open(Path(path), newline="") as fh:
            return list(csv.DictReader(fh))


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")


def bonferroni_select(
    candidates: CandidateSet, table: CalibrationTable, alpha: float, domain_side: float
) -> DetectionResult:
    """Accept candidates with ``p <= alpha / M_L``.

    The score threshold is the smallest table sample whose tail fraction is
    at most ``alpha / M_L``.
    """
    _check_alpha(alpha)
    d = candidates.points.shape[1] if candidates.points.ndim == 2 else 1
    m_l = n_bins(domain_side, candidates.r, d)
    level = alpha / m_l
    u = table.threshold(level)
    p = np.atleast_1d(table.p_value(candidates.scores)) if len(candidates) else np.zeros(0)
    accepted = np.flatnonzero(p <= level)
    return DetectionResult(candidates, p, "bonferroni", alpha, m_l, u, accepted)


def bh_select(
    candidates: CandidateSet, table: CalibrationTable, alpha: float, domain_side: float
) -> DetectionResult:
    """Benjamini-Hochberg over candidate p-values with ``M_L`` hypotheses.

    Finds the largest ``k`` with ``p_(k) <= k * alpha / M_L`` and accepts the
    ``k`` smallest p-values (ties broken by higher score).
    """
    _check_alpha(alpha)
    d = candidates.points.shape[1] if candidates.points.ndim == 2 else 1
    m_l = n_bins(domain_side, candidates.r, d)
    scores = candidates.scores
    p = np.atleast_1d(table.p_value(scores)) if len(candidates) else np.zeros(0)
    order = np.lexsort((-scores, p))
    ranks = np.arange(1, len(p) + 1)
    ok = np.flatnonzero(p[order] <= ranks * alpha / m_l)
    k = int(ok[-1]) + 1 if ok.size else 0
    accepted = np.sort(order[:k])
    u = float(scores[accepted].min()) if k else math.inf
    return DetectionResult(candidates, p, "bh", alpha, m_l, u, accepted)
