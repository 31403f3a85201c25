"""Scikit-learn style front end: calibrate in ``fit``, detect in ``predict``."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, check_scalar

from .calibrate import STATISTICS, NoiseModel, build_table
from .core import BasisSet, GridField
from .detect import PROCEDURES, DetectionResult, bh_select, bonferroni_select, select_candidates
from .scoremap import score_map

__all__ = ["SubspaceDetector"]


def _check_field(y, ndim: int) -> GridField:
    if isinstance(y, GridField):
        field = y
    else:
        arr = np.asarray(y, dtype=np.float64)
        if arr.ndim != ndim:
            raise ValueError(f"expected a {ndim}-d field, got an array with {arr.ndim} dimensions")
        field = GridField(arr)
    if field.ndim != ndim:
        raise ValueError(f"field ndim {field.ndim} does not match basis ndim {ndim}")
    return field


class SubspaceDetector(BaseEstimator):
    """Detect objects spanned by a known basis in stationary Gaussian noise.

    Parameters
    ----------
    basis : BasisSet
        Orthonormal basis spanning every object.
    delta : float
        Localization radius in pixels; the erasure box side is ``r = 2B + delta``
        unless ``r`` is given.
    alpha : float, default=0.05
        Target FWER (Bonferroni) or FDR (Benjamini-Hochberg).
    procedure : {"bonferroni", "bh"}
    statistic : {"tilde_z", "s_z"}
        Null statistic used for p-values.
    noise : NoiseModel, optional
        Noise model; estimated from ``X`` in :meth:`fit` when omitted.
    n_sim : int, default=10000
        Monte Carlo noise patches in the calibration table.
    r : float, optional
    seed : int, default=0
    n_jobs : int, optional
        Worker threads for calibration; the result does not depend on it.

    Attributes
    ----------
    table_ : CalibrationTable
    noise_ : NoiseModel
    r_ : float
    """

    def __init__(
        self,
        basis: BasisSet | None = None,
        delta: float = 1.0,
        alpha: float = 0.05,
        procedure: str = "bh",
        statistic: str = "tilde_z",
        noise: NoiseModel | None = None,
        n_sim: int = 10_000,
        r: float | None = None,
        seed: int = 0,
        n_jobs: int | None = None,
    ):
        self.basis = basis
        self.delta = delta
        self.alpha = alpha
        self.procedure = procedure
        self.statistic = statistic
        self.noise = noise
        self.n_sim = n_sim
        self.r = r
        self.seed = seed
        self.n_jobs = n_jobs

    def _validate_params(self):
        if not isinstance(self.basis, BasisSet):
            raise TypeError("basis must be a BasisSet")
        check_scalar(self.delta, "delta", (int, float), min_val=1, max_val=2 * self.basis.support)
        check_scalar(self.alpha, "alpha", float, min_val=0.0, max_val=1.0, include_boundaries="neither")
        check_scalar(self.n_sim, "n_sim", int, min_val=1)
        if self.procedure not in PROCEDURES:
            raise ValueError(f"procedure must be one of {PROCEDURES}")
        if self.statistic not in STATISTICS:
            raise ValueError(f"statistic must be one of {STATISTICS}")
        if self.r is not None:
            check_scalar(self.r, "r", (int, float), min_val=1)

    def fit(self, X=None, y=None):
        """Build the null calibration table.

        Parameters
        ----------
        X : sequence of array-like, optional
            Object-free background patches used to estimate the noise model
            when ``noise`` is not set.
        y : ignored
        """
        self._validate_params()
        if self.noise is not None:
            noise = self.noise.with_seed(self.seed)
        elif X is not None:
            noise = NoiseModel.from_patches(X, seed=self.seed)
        else:
            noise = NoiseModel(seed=self.seed)
        self.noise_ = noise
        self.r_ = float(self.r) if self.r is not None else 2.0 * self.basis.support + float(self.delta)
        self.table_ = build_table(noise, self.basis, self.r_, self.n_sim, self.statistic, self.n_jobs)
        return self

    def transform(self, y) -> GridField:
        """Score map of ``y`` over its valid region."""
        check_is_fitted(self, "table_")
        return score_map(_check_field(y, self.basis.ndim), self.basis)

    def predict(self, y) -> DetectionResult:
        """Candidate peaks of ``y`` with p-values and the accepted subset."""
        field = _check_field(y, self.basis.ndim)
        s = self.transform(field)
        cands = select_candidates(s, self.r_)
        select = bonferroni_select if self.procedure == "bonferroni" else bh_select
        return select(cands, self.table_, self.alpha, max(field.shape))

    def fit_predict(self, y, X=None) -> DetectionResult:
        return self.fit(X).predict(y)
