"""Matching detections to ground truth and the repeated-trial simulation protocol."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .calibrate import STATISTICS, NoiseModel, build_tables, noise_filter_1d, sample_noise_field
from .core import BasisSet, GridField
from .detect import PROCEDURES, DetectionResult, bh_select, bonferroni_select, select_candidates
from .scoremap import basis_correlations
from .synth import Scene, fourier_bessel_basis, make_scene, render_scene, sigma_for_snr

__all__ = [
    "TrialOutcome",
    "EvalReport",
    "classify",
    "aggregate",
    "binomial_upper",
    "ExperimentConfig",
    "projected_noise_energy",
    "rescale_snr",
    "run_experiment",
    "write_report_csv",
    "read_report_csv",
    "REPORT_COLUMNS",
]

REPORT_COLUMNS = ("snr", "procedure", "n_trials", "fwer", "fdr", "power", "fwer_se", "fdr_se", "power_se")
TRIAL_COLUMNS = ("trial", "snr", "procedure", "n_objects", "V", "W", "hits", "fdp")


@dataclass(frozen=True)
class TrialOutcome:
    V: int
    W: int
    hit_mask: np.ndarray

    @property
    def fdp(self) -> float:
        return self.V / max(self.V + self.W, 1)

    @property
    def power(self) -> float:
        return float(np.mean(self.hit_mask)) if len(self.hit_mask) else math.nan


@dataclass(frozen=True)
class EvalReport:
    n_trials: int
    fwer_hat: float
    fdr_hat: float
    power_hat: float
    fwer_se: float
    fdr_se: float
    power_se: float
    n_false_trials: int
    fdp: np.ndarray = field(repr=False)
    snr: float = math.nan
    procedure: str = ""

    def row(self) -> dict:
        return {
            "snr": self.snr,
            "procedure": self.procedure,
            "n_trials": self.n_trials,
            "fwer": self.fwer_hat,
            "fdr": self.fdr_hat,
            "power": self.power_hat,
            "fwer_se": self.fwer_se,
            "fdr_se": self.fdr_se,
            "power_se": self.power_se,
        }


def classify(result: DetectionResult, scene: Scene) -> TrialOutcome:
    """Count accepted points near / away from the true centers.

    A point ``t`` is a true positive when ``|t - tau_i|_inf < delta`` for some
    center; a point at distance exactly ``delta`` is a false detection.
    """
    pts = np.asarray(result.accepted_points, dtype=np.float64)
    centers = scene.centers.astype(np.float64)
    if pts.size and pts.shape[1] != scene.ndim:
        raise ValueError("detection and scene dimensions differ")
    hits = np.zeros(scene.N, dtype=bool)
    if pts.size == 0:
        return TrialOutcome(0, 0, hits)
    if scene.N == 0:
        return TrialOutcome(len(pts), 0, hits)
    dist = np.max(np.abs(pts[:, None, :] - centers[None, :, :]), axis=2)
    inside = dist < scene.delta
    true_pos = inside.any(axis=1)
    hits = inside.any(axis=0)
    W = int(true_pos.sum())
    return TrialOutcome(len(pts) - W, W, hits)


def aggregate(outcomes: Sequence[TrialOutcome], snr: float = math.nan, procedure: str = "") -> EvalReport:
    """Sample-mean FWER, FDR and power with their standard errors."""
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("no trial outcomes to aggregate")
    n = len(outcomes)
    false = np.array([o.V >= 1 for o in outcomes], dtype=np.float64)
    fdp = np.array([o.fdp for o in outcomes])
    power = np.array([o.power for o in outcomes])
    if np.any(np.isnan(power)):
        raise ValueError("trial without objects; power is undefined")
    ddof = 1 if n > 1 else 0
    fwer = float(false.mean())
    return EvalReport(
        n_trials=n,
        fwer_hat=fwer,
        fdr_hat=float(fdp.mean()),
        power_hat=float(power.mean()),
        fwer_se=math.sqrt(fwer * (1.0 - fwer) / n),
        fdr_se=float(fdp.std(ddof=ddof) / math.sqrt(n)),
        power_se=float(power.std(ddof=ddof) / math.sqrt(n)),
        n_false_trials=int(false.sum()),
        fdp=fdp,
        snr=float(snr),
        procedure=procedure,
    )


def binomial_upper(k: int, n: int, confidence: float = 0.95) -> float:
    """One-sided Clopper-Pearson upper confidence bound for a binomial rate."""
    if k >= n:
        return 1.0
    return float(stats.beta.ppf(confidence, k + 1, n - k))


def projected_noise_energy(basis: BasisSet, noise: NoiseModel) -> float:
    """``E[S^z(t)] = sum_j psi_j^T C psi_j`` for unit-variance noise."""
    d = basis.ndim
    h = noise_filter_1d(noise)
    out = basis.functions
    # C = H H^T with H separable, so psi^T C psi = |H^T psi|^2
    for ax in range(1, d + 1):
        out = np.apply_along_axis(lambda v: np.convolve(v, h[::-1], mode="full"), ax, out)
    return float(np.sum(out * out))


def rescale_snr(snr: float, reference: BasisSet, target: BasisSet, noise: NoiseModel) -> float:
    """SNR giving ``target`` the same object-to-noise score ratio ``reference`` has at ``snr``.

    With unit-norm objects the center score over the mean noise score is
    ``snr * B**d / E[S^z]``; this solves for the SNR that keeps it fixed.
    """
    gamma_ref = reference.support**reference.ndim / projected_noise_energy(reference, noise)
    gamma_tgt = target.support**target.ndim / projected_noise_energy(target, noise)
    return float(snr * gamma_ref / gamma_tgt)


@dataclass
class ExperimentConfig:
    L: int = 512
    B: int = 32
    M: int = 12
    density: float = 0.5
    delta: float | str = 5.0
    alpha: float = 0.05
    snrs: tuple[float, ...] = (1.0, 0.5, 0.4, 0.35)
    n_trials: int = 100
    n_sim: int = 10_000
    statistic: str = "tilde_z"
    procedures: tuple[str, ...] = PROCEDURES
    length_scale: float = 1.0
    seed: int = 0
    n_jobs: int | None = None

    def __post_init__(self):
        self.snrs = tuple(float(s) for s in self.snrs)
        self.procedures = tuple(self.procedures)
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}")
        for p in self.procedures:
            if p not in PROCEDURES:
                raise ValueError(f"unknown procedure {p!r}")
        if not self.snrs or min(self.snrs) <= 0:
            raise ValueError("SNR list must be nonempty and positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.n_trials < 1 or self.n_sim < 1:
            raise ValueError("n_trials and n_sim must be positive")
        if not 0.0 < self.density < 1.0:
            raise ValueError("density must lie in (0, 1)")
        if self.L < self.B:
            raise ValueError("domain smaller than the object support")

    @property
    def r(self) -> float:
        return 2.0 * self.B + float(self.delta)

    def to_dict(self) -> dict:
        return asdict(self)


def _resolve_delta(config: ExperimentConfig, basis: BasisSet) -> float:
    if config.delta == "auto":
        from .localize import estimate_delta

        return estimate_delta(basis).delta
    return float(config.delta)


def _trial_seeds(seed: int, trial: int) -> tuple[np.random.SeedSequence, int]:
    ss = np.random.SeedSequence(int(seed), spawn_key=(1, int(trial)))
    scene_seq, noise_seq = ss.spawn(2)
    return scene_seq, int(noise_seq.generate_state(1, np.uint64)[0])


def _run_trial(config, basis, delta, noise, tables, trial):
    """Outcomes for every (snr, procedure) pair on one scene and one unit noise draw.

    The scene and the unit-variance noise are shared across SNRs; only the
    noise amplitude changes, which keeps the SNR comparisons paired.
    """
    scene_seq, noise_seed = _trial_seeds(config.seed, trial)
    unit = noise.with_sigma(1.0).with_seed(noise_seed)
    scene = make_scene(config.L, basis, delta, config.density, unit, np.random.default_rng(scene_seq))
    x = render_scene(scene, basis)
    z = sample_noise_field(unit, x.shape)
    cx = basis_correlations(x.data, basis)
    cz = basis_correlations(z.data, basis)
    origin = tuple(o + basis.center for o in x.origin)
    a_min = min(float(np.linalg.norm(o.coefficients)) for o in scene.objects)
    out = {}
    rows = []
    for snr in config.snrs:
        sigma = sigma_for_snr(snr, a_min, basis.support, basis.ndim)
        corr = cx + sigma * cz
        s_y = GridField(np.einsum("j...,j...->...", corr, corr), origin)
        cands = select_candidates(s_y, config.r)
        table = tables[config.statistic].scaled(sigma**2)
        for proc in config.procedures:
            select = bonferroni_select if proc == "bonferroni" else bh_select
            res = select(cands, table, config.alpha, config.L)
            oc = classify(res, scene)
            out[(snr, proc)] = oc
            rows.append((trial, snr, proc, scene.N, oc.V, oc.W, int(oc.hit_mask.sum()), oc.fdp))
    return out, rows


def run_experiment(
    config: ExperimentConfig,
    basis: BasisSet | None = None,
    trial_csv=None,
) -> list[EvalReport]:
    """Repeat detection on fresh random scenes and report per (SNR, procedure).

    One unit-variance calibration table is built for the configured
    statistic and rescaled to each noise level. Trial ``k`` uses RNG streams
    derived from ``(seed, k)``, so reports do not depend on ``n_jobs``.
    """
    if basis is None:
        basis = fourier_bessel_basis(config.B, config.M)
    if basis.support != config.B or basis.M != config.M:
        raise ValueError("basis does not match the configured B and M")
    delta = _resolve_delta(config, basis)
    noise = NoiseModel("gaussian_kernel", 1.0, config.length_scale, int(config.seed))
    tables = build_tables(noise, basis, 2.0 * config.B + delta, config.n_sim, (config.statistic,), config.n_jobs)
    cfg = ExperimentConfig(**dict(config.to_dict(), delta=delta))

    def work(k):
        return _run_trial(cfg, basis, delta, noise, tables, k)

    trials = range(config.n_trials)
    if config.n_jobs is not None and config.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(work, trials))
    else:
        results = [work(k) for k in trials]

    reports = []
    for snr in cfg.snrs:
        for proc in cfg.procedures:
            reports.append(aggregate([res[(snr, proc)] for res, _ in results], snr, proc))
    if trial_csv is not None:
        with open(Path(trial_csv), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRIAL_COLUMNS)
            for _, rows in results:
                for row in rows:
                    w.writerow([row[0], repr(row[1]), *row[2:7], repr(float(row[7]))])
    return reports


def write_report_csv(reports: Sequence[EvalReport], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for rep in reports:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rep.row().items()})


def read_report_csv(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))
