import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lsmdetect import SubspaceDetector
from lsmdetect.calibrate import NoiseModel, sample_noise_field
from lsmdetect.detect import n_bins
from lsmdetect.synth import make_scene, observe


def test_params_and_clone(fb16):
    est = SubspaceDetector(fb16, delta=3.0, alpha=0.1, procedure="bonferroni")
    params = est.get_params()
    assert params["delta"] == 3.0 and params["procedure"] == "bonferroni"
    twin = clone(est)
    assert twin.get_params()["alpha"] == 0.1
    assert not hasattr(twin, "table_")


def test_unfitted_and_bad_params(fb16):
    with pytest.raises(NotFittedError):
        SubspaceDetector(fb16).predict(np.zeros((40, 40)))
    with pytest.raises(ValueError):
        SubspaceDetector(fb16, procedure="holm").fit()
    with pytest.raises(ValueError):
        SubspaceDetector(fb16, alpha=1.5).fit()
    with pytest.raises(TypeError):
        SubspaceDetector(None).fit()


def test_detects_strong_objects(fb16):
    noise = NoiseModel(sigma=0.01, seed=4)
    scene = make_scene(128, fb16, 3.0, 0.2, noise, np.random.default_rng(4))
    _, y = observe(scene, fb16)
    est = SubspaceDetector(fb16, delta=3.0, noise=noise, n_sim=3000, seed=1).fit()
    res = est.predict(y)
    pts = res.accepted_points
    assert len(pts) == scene.N
    d = np.max(np.abs(pts[:, None] - scene.centers[None]), axis=2)
    assert np.all(d.min(axis=1) < 3.0)
    assert est.transform(y).shape == tuple(s - 15 for s in y.shape)


def test_fit_from_patches(fb16):
    noise = NoiseModel(sigma=2.0, seed=0)
    patches = [sample_noise_field(noise, (48, 48), i).data for i in range(20)]
    est = SubspaceDetector(fb16, delta=2.0, n_sim=500).fit(patches)
    assert est.noise_.sigma == pytest.approx(2.0, rel=0.1)


def test_pure_noise_rarely_rejects(fb16):
    """Object-free images: every candidate p-value exceeds alpha / M_L in most runs."""
    noise = NoiseModel(sigma=1.0, seed=0)
    est = SubspaceDetector(fb16, delta=3.0, noise=noise, n_sim=5000, procedure="bonferroni").fit()
    L = 64
    level = 0.05 / n_bins(L, est.r_, 2)
    quiet = 0
    for k in range(100):
        y = sample_noise_field(noise.with_seed(10_000 + k), (L, L))
        res = est.predict(y)
        quiet += bool(np.all(res.p_values > level))
    assert quiet >= 95
