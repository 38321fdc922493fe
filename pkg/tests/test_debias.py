import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dvge.debias import DvgeTrainRun, PerturbationConfig, clip_eps, infer, perturb, train_dvge, train_plain
from dvge.nn import FitConfig, Mlp, MlpSpec

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_clip_examples_exact():
    eps = np.full(3, 0.5)
    np.testing.assert_array_equal(clip_eps(np.array([0.7, -0.7, 0.3]), eps), [0.5, -0.5, 0.3])
    with pytest.raises(ValueError):
        clip_eps(np.ones(2), -np.ones(2))


@given(arrays(np.float64, (4, 3), elements=finite), arrays(np.float64, (4, 3), elements=finite),
       arrays(np.float64, (4, 3), elements=finite), st.floats(0, 10), st.floats(0, 10))
def test_perturbation_bound(z, fs, ft, e1, e2):
    zp = perturb(z, fs, ft, PerturbationConfig(e1, e2))
    assert np.all(np.abs(zp - z) <= 0.1 * np.abs(z))


@given(arrays(np.float64, (3, 2), elements=finite))
def test_zero_etas_are_identity(z):
    zp = perturb(z, np.ones_like(z), -np.ones_like(z), PerturbationConfig())
    assert np.array_equal(zp, z)


def test_perturbation_direction():
    z = np.array([[1.0, -1.0]])
    zp = perturb(z, np.array([[0.01, 0.0]]), np.array([[0.0, 0.02]]), PerturbationConfig(1.0, 1.0))
    np.testing.assert_allclose(zp, [[1.01, -1.02]])


def test_perturb_validation():
    with pytest.raises(ValueError):
        perturb(np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 2)), PerturbationConfig())
    with pytest.raises(ValueError):
        perturb(np.array([[np.nan]]), np.ones((1, 1)), np.ones((1, 1)), PerturbationConfig())
    with pytest.raises(ValueError):
        PerturbationConfig(eta1=-1)


@pytest.fixture
def toy(rng):
    z = rng.normal(size=(120, 4))
    y = (z[:, 0] > 0).astype(int)
    s = (z[:, 1] > 0).astype(int)
    d = Mlp.init(MlpSpec.build(4, (8,), 2), np.random.default_rng(1))
    return z, y, s, d


def test_identity_path_bit_identical(toy):
    z, y, s, d = toy
    fit = FitConfig(epochs=3)
    dv = train_dvge(DvgeTrainRun(d, PerturbationConfig(0, 0), fit, (8,), seed=4), z, y).model
    plain = train_plain(z, y, fit, (8,), seed=4)
    assert dv.checksum() == plain.checksum()


def test_dvge_freezes_sensitive_classifier_and_traces(toy):
    z, y, s, d = toy
    before = d.checksum()
    res = train_dvge(DvgeTrainRun(d, PerturbationConfig(1.0, 0.5), FitConfig(epochs=2), (8,), seed=0),
                     z, y, eval_set=(z, y, s))
    assert d.checksum() == before
    assert len(res.trace) == 2 and len(res.losses) == 2
    assert res.model.checksum() != train_plain(z, y, FitConfig(epochs=2), (8,), seed=0).checksum()


def test_dvge_deterministic(toy):
    z, y, s, d = toy
    run = lambda: train_dvge(DvgeTrainRun(d, PerturbationConfig(0.5, 0.5), FitConfig(epochs=2), (8,), seed=2), z, y)
    assert run().model.checksum() == run().model.checksum()


def test_dvge_errors(toy):
    z, y, s, d = toy
    with pytest.raises(ValueError):
        train_dvge(DvgeTrainRun(None, PerturbationConfig()), z, y)
    with pytest.raises(ValueError):
        train_dvge(DvgeTrainRun(d, PerturbationConfig(), FitConfig(epochs=1), (8,)), z[:, :3], y)
    with pytest.raises(ValueError):
        infer(d, z[:, :2])
