import numpy as np
import pytest

from lsmdetect.calibrate import (
    CalibrationTable,
    NoiseModel,
    box_points,
    build_table,
    build_tables,
    max_statistic,
    noise_filter_1d,
    p_value,
    patch_side,
    sample_noise_field,
)
from lsmdetect.core import GridBox
from lsmdetect.scoremap import basis_correlations


@pytest.mark.parametrize("ell", [0.7, 1.0, 2.5])
def test_filter_autocorrelation_reproduces_kernel(ell):
    h = noise_filter_1d(NoiseModel(length_scale=ell))
    auto = np.correlate(h, h, mode="full")
    lags = np.arange(len(auto)) - (len(h) - 1)
    np.testing.assert_allclose(auto, np.exp(-2.0 * lags**2 / ell**2), atol=1e-12)


def test_exact_sampler_covariance_2d():
    """Covariance of the separable sampler at any lag equals sigma^2 exp(-2|lag|^2)."""
    model = NoiseModel(sigma=1.7)
    h = noise_filter_1d(model)
    auto = np.correlate(h, h, mode="full")
    c = len(h) - 1
    for lag in [(0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1), (3, 0)]:
        cov = model.sigma**2 * auto[c + lag[0]] * auto[c + lag[1]]
        assert abs(cov - model.covariance(lag)) <= 1e-12 * model.sigma**2


def test_white_noise_filter():
    assert noise_filter_1d(NoiseModel("white")).tolist() == [1.0]
    assert NoiseModel("white", 2.0).covariance((1, 0)) == 0.0


def test_noise_streams_are_reproducible():
    m = NoiseModel(seed=5)
    a = sample_noise_field(m, (20, 30), 3).data
    b = sample_noise_field(m, (20, 30), 3).data
    c = sample_noise_field(m, (20, 30), 4).data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(sigma=0)
    with pytest.raises(ValueError):
        NoiseModel(kind="pink")
    with pytest.raises(ValueError):
        NoiseModel(length_scale=-1)


@pytest.mark.parametrize("kind,ell", [("gaussian_kernel", 1.0), ("gaussian_kernel", 1.6), ("white", 1.0)])
def test_from_patches_recovers_model(kind, ell):
    truth = NoiseModel(kind, 2.0, ell, seed=1)
    patches = [sample_noise_field(truth, (64, 64), i) for i in range(40)]
    est = NoiseModel.from_patches(patches)
    assert est.kind == kind
    assert abs(est.sigma - 2.0) < 0.05
    if kind != "white":
        assert abs(est.length_scale - ell) < 0.05 * ell


def test_box_geometry():
    assert box_points(138) == 69
    assert patch_side(138, 64) == 132
    assert box_points(4) == 3
    assert box_points(3) == 1


def test_max_statistic_kinds(fb16):
    z = sample_noise_field(NoiseModel(seed=2), (30, 30))
    corr = basis_correlations(z.data, fb16)
    box = GridBox((15, 15), 6.0)
    sl = (slice(None), slice(15 - 3 - 8, 15 + 3 - 8 + 1), slice(15 - 3 - 8, 15 + 3 - 8 + 1))
    sub = corr[sl]
    assert max_statistic(z, fb16, "s_z", box) == pytest.approx(float((sub**2).sum(0).max()))
    assert max_statistic(z, fb16, "tilde_z", box) == pytest.approx(5 * float((sub**2).max()))
    with pytest.raises(ValueError, match="box exceeds"):
        max_statistic(z, fb16, "s_z", GridBox((9, 9), 6.0))


def _p_linear(samples, u):
    return sum(1 for m in samples if m > u) / len(samples)


def test_p_value_matches_linear_scan(rng):
    samples = np.round(rng.exponential(size=300), 2)  # ties on purpose
    table = CalibrationTable("s_z", samples, 10.0)
    for u in list(samples[:50]) + [-1.0, 0.0, 1e9, float(np.median(samples))]:
        assert p_value(table, u) == _p_linear(samples, u)
    us = rng.uniform(0, 3, 40)
    assert np.array_equal(table.p_value(us), np.array([_p_linear(samples, u) for u in us]))


def test_threshold_and_errors():
    table = CalibrationTable("tilde_z", np.arange(1.0, 101.0), 5.0)
    u = table.threshold(0.05)
    assert table.p_value(u) <= 0.05
    assert table.p_value(table.samples[table.samples < u].max()) > 0.05
    assert table.threshold(0.01) == 99.0
    with pytest.raises(ValueError, match="too small"):
        table.threshold(0.001)
    with pytest.raises(ValueError):
        CalibrationTable("s_z", np.array([-1.0, 2.0]), 1.0)
    with pytest.raises(ValueError):
        CalibrationTable("s_z", np.array([]), 1.0)


def test_table_scaling(fb16):
    base = NoiseModel(seed=3)
    unit = build_table(base, fb16, 36.0, 64, "s_z")
    scaled = build_table(base.with_sigma(2.0), fb16, 36.0, 64, "s_z")
    np.testing.assert_allclose(unit.scaled(4.0).samples, scaled.samples, rtol=1e-12)


def test_tables_independent_of_threads(fb16):
    m = NoiseModel(seed=11)
    a = build_tables(m, fb16, 36.0, 150, n_jobs=1)
    b = build_tables(m, fb16, 36.0, 150, n_jobs=3)
    for k in a:
        np.testing.assert_array_equal(a[k].samples, b[k].samples)
    assert np.all(a["tilde_z"].samples >= 0)


def test_table_roundtrip(tmp_path, fb16):
    t = build_table(NoiseModel(seed=1), fb16, 35.0, 70, "tilde_z")
    t.save(tmp_path / "t.grid")
    u = CalibrationTable.load(tmp_path / "t.grid")
    assert u.kind == "tilde_z" and u.box_side == 17.5 and u.n_sim == 70
    np.testing.assert_array_equal(u.samples, t.samples)
    assert np.all(np.diff(u.samples) >= 0)
    assert u.meta["basis"] == fb16.checksum()
