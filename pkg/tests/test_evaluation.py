import csv

import numpy as np
import pytest

from lsmdetect.calibrate import CalibrationTable, NoiseModel
from lsmdetect.detect import CandidateSet, DetectionResult
from lsmdetect.evaluation import (
    REPORT_COLUMNS,
    ExperimentConfig,
    TrialOutcome,
    aggregate,
    binomial_upper,
    classify,
    projected_noise_energy,
    rescale_snr,
    run_experiment,
    write_report_csv,
)
from lsmdetect.scoremap import score_map
from lsmdetect.calibrate import sample_noise_field
from lsmdetect.synth import ObjectSpec, Scene


def _result(points):
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 1)
    cands = CandidateSet(pts, np.arange(len(pts), 0, -1, dtype=float), 10.0)
    return DetectionResult(cands, np.zeros(len(pts)), "bh", 0.05, 1, 0.0, np.arange(len(pts)))


def _scene_1d(centers, delta=4.0):
    return Scene(100, 8, [ObjectSpec((c,), np.ones(1)) for c in centers], delta, ndim=1)


def test_classify_examples():
    scene = _scene_1d([20, 60])
    out = classify(_result([]), scene)
    assert (out.V, out.W, out.hit_mask.tolist()) == (0, 0, [False, False])
    out = classify(_result([20]), scene)
    assert (out.V, out.W, out.hit_mask.tolist()) == (0, 1, [True, False])


def test_classify_boundary_enumeration():
    """Distances below delta are hits, delta itself is not (1-D toy)."""
    scene = _scene_1d([50], delta=4.0)
    for off in range(-6, 7):
        out = classify(_result([50 + off]), scene)
        assert out.W == int(abs(off) < 4)
        assert out.V + out.W == 1
    assert classify(_result([52]), scene).W == 1  # distance delta / 2


def test_classify_deduplicates_hits():
    out = classify(_result([20, 21, 60, 90]), _scene_1d([20, 60]))
    assert (out.V, out.W) == (1, 3)
    assert out.hit_mask.all()


def test_aggregate_examples():
    rep = aggregate([TrialOutcome(0, 2, np.array([True, True]))] * 3)
    assert (rep.fwer_hat, rep.fdr_hat, rep.power_hat) == (0.0, 0.0, 1.0)
    rep = aggregate([TrialOutcome(1, 1, np.array([True, False]))])
    assert (rep.fwer_hat, rep.fdr_hat, rep.power_hat) == (1.0, 0.5, 0.5)
    with pytest.raises(ValueError):
        aggregate([])


def test_binomial_upper():
    assert binomial_upper(0, 100) == pytest.approx(1 - 0.05 ** (1 / 100))
    assert binomial_upper(5, 5) == 1.0


def test_projected_energy_matches_monte_carlo(fb16):
    noise = NoiseModel(seed=2)
    e = projected_noise_energy(fb16, noise)
    vals = [score_map(sample_noise_field(noise, (16, 16), i), fb16).data[0, 0] for i in range(4000)]
    assert abs(np.mean(vals) - e) < 4 * np.std(vals) / np.sqrt(len(vals))
    assert rescale_snr(0.5, fb16, fb16, noise) == pytest.approx(0.5)


def _small_config(**kw):
    base = dict(L=96, B=16, M=5, density=0.15, delta=3.0, snrs=(50.0, 2.0), n_trials=3, n_sim=2000, seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


def test_run_experiment_reproducible_and_thread_invariant(tmp_path, fb16):
    a = run_experiment(_small_config(n_jobs=1), fb16, trial_csv=tmp_path / "t1.csv")
    b = run_experiment(_small_config(n_jobs=3), fb16, trial_csv=tmp_path / "t2.csv")
    assert [r.row() for r in a] == [r.row() for r in b]
    assert (tmp_path / "t1.csv").read_bytes() == (tmp_path / "t2.csv").read_bytes()
    write_report_csv(a, tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert len(rows) == 4
    huge = [r for r in a if r.snr == 50.0]
    assert all(r.power_hat == 1.0 for r in huge)
    for r in a:
        assert 0 <= r.fdr_hat <= r.fwer_hat <= 1 or r.fwer_hat == r.fdr_hat == 0
        assert np.all(r.fdp <= (r.fdp > 0))


def test_config_validation():
    with pytest.raises(ValueError):
        _small_config(statistic="max")
    with pytest.raises(ValueError):
        _small_config(snrs=())
    with pytest.raises(ValueError):
        _small_config(procedures=("holm",))
    assert _small_config().r == 35.0
