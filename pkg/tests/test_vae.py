import numpy as np
import pytest

from conftest import numeric_grad
from dvge.autodiff import Tensor, backward
from dvge.nn import CheckpointError
from dvge.vae import (
    TcDiscriminator, VaeConfig, VaeModel, discriminator_accuracy, encode, fit_tc_discriminator,
    kl_standard_normal, load_vae, permute_dims, reconstruction_loss, reparameterize, save_vae,
    tc_term, train_factor_vae, train_vae, train_vanilla_vae, vae_loss,
)

TINY = dict(latent_dim=3, hidden=(8,), disc_hidden=(8,), epochs=2, batch_size=16)


def test_kl_identities_exact():
    assert kl_standard_normal(np.zeros(5), np.zeros(5)).item() == 0.0
    assert abs(kl_standard_normal(np.ones(4), np.zeros(4)).item() - 2.0) <= 1e-12
    batch = kl_standard_normal(np.ones((3, 4)), np.zeros((3, 4))).item()
    assert abs(batch - 2.0) <= 1e-12


def test_kl_closed_form(rng):
    mu, lv = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    ref = np.mean(0.5 * (mu**2 + np.exp(lv) - 1 - lv).sum(axis=1))
    np.testing.assert_allclose(kl_standard_normal(mu, lv).item(), ref, rtol=1e-13)


def test_reparameterize_and_grads(rng):
    mu = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    lv = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    eps = rng.normal(size=(4, 2))
    z = reparameterize(mu, lv, eps)
    np.testing.assert_allclose(z.data, mu.data + np.exp(0.5 * lv.data) * eps)
    g = backward(z.sum(), [mu, lv])
    np.testing.assert_allclose(g[mu], np.ones((4, 2)))
    np.testing.assert_allclose(g[lv], 0.5 * np.exp(0.5 * lv.data) * eps)
    with pytest.raises(ValueError):
        reparameterize(mu, lv, np.zeros((4, 3)))


def test_reconstruction_loss():
    r = reconstruction_loss(Tensor(np.array([[1.0, 2.0], [0.0, 0.0]])), np.zeros((2, 2)), 3.0)
    assert r.item() == pytest.approx(3.0 * (5.0 + 0.0) / 2)


def test_vae_loss_gradients(rng):
    cfg = VaeConfig(**TINY)
    model = VaeModel.init(4, cfg, rng)
    x, noise = rng.uniform(size=(5, 4)), rng.normal(size=(5, 3))
    grads = backward(vae_loss(model, x, noise, 2.0), model.params)
    p = model.params[0]
    num = numeric_grad(lambda: vae_loss(model, x, noise, 2.0).item(), p.data)
    np.testing.assert_allclose(grads[p], num, rtol=1e-5, atol=1e-7)


def test_encode_shapes(rng):
    model = VaeModel.init(4, VaeConfig(**TINY), rng)
    mu, lv = encode(model, rng.uniform(size=(6, 4)))
    assert mu.shape == lv.shape == (6, 3)
    with pytest.raises(ValueError):
        encode(model, np.zeros((2, 5)))


def test_permute_dims_preserves_marginals(rng):
    z = rng.normal(size=(50, 4))
    p = permute_dims(z, rng)
    for j in range(4):
        np.testing.assert_array_equal(np.sort(p[:, j]), np.sort(z[:, j]))
    assert not np.array_equal(p, z)


def test_gamma_zero_factor_is_bit_identical_to_vanilla(rng):
    x = rng.uniform(size=(40, 4))
    cfg = VaeConfig(**TINY, gamma=0.0, seed=3)
    v = train_vanilla_vae(x, cfg)
    f, _ = train_factor_vae(x, cfg)
    assert v.checksum() == f.checksum()
    assert v.history == f.history


def test_gamma_positive_differs_and_is_deterministic(rng):
    x = rng.uniform(size=(40, 4))
    cfg = VaeConfig(**TINY, gamma=5.0, seed=3)
    a, da = train_factor_vae(x, cfg)
    b, db = train_factor_vae(x, cfg)
    assert a.checksum() == b.checksum() and da.mlp.checksum() == db.mlp.checksum()
    assert a.checksum() != train_vanilla_vae(x, cfg).checksum()


def test_tc_term_sign_convention(rng):
    disc = TcDiscriminator.init(2, (4,), rng)
    z = rng.normal(size=(5, 2))
    logits = disc(z).data
    assert tc_term(disc, z).item() == pytest.approx(np.mean(logits[:, 0] - logits[:, 1]))


def test_discriminator_near_chance_on_factorized_latents():
    z = np.random.default_rng(0).normal(size=(4000, 4))
    disc = fit_tc_discriminator(z, epochs=5, seed=1)
    acc = discriminator_accuracy(disc, z, np.random.default_rng(2))
    assert abs(acc - 0.5) <= 0.05


def test_discriminator_detects_dependence():
    r = np.random.default_rng(0)
    a = r.normal(size=(4000, 1))
    z = np.hstack([a, a + 0.05 * r.normal(size=(4000, 1))])
    disc = fit_tc_discriminator(z, epochs=10, seed=1)
    assert discriminator_accuracy(disc, z, np.random.default_rng(2)) > 0.8


def test_train_vae_dispatch_and_errors(rng):
    x = rng.uniform(size=(20, 4))
    with pytest.raises(ValueError):
        train_vae(x, VaeConfig(**TINY), "beta")
    with pytest.raises(ValueError):
        VaeConfig(gamma=-1)
    with pytest.raises(ValueError):
        train_vanilla_vae(np.zeros((0, 4)), VaeConfig(**TINY))


def test_save_load_round_trip(tmp_path, rng):
    x = rng.uniform(size=(20, 4))
    cfg = VaeConfig(**TINY, gamma=1.0)
    m, d = train_factor_vae(x, cfg)
    path = save_vae(tmp_path / "v.json", m, cfg, d)
    m2, d2 = load_vae(path)
    assert m2.checksum() == m.checksum() and d2.mlp.checksum() == d.mlp.checksum()
    np.testing.assert_array_equal(m2.encode_mean(x), m.encode_mean(x))
    path.write_text(path.read_text()[:100])
    with pytest.raises(CheckpointError, match="v.json"):
        load_vae(path)
