import numpy as np
import pytest

from piigan.engine import Tensor, grad, tsum
from piigan.latent import LatentSample, concat_inputs, reparameterize, sample_prior, tile_latent


def test_zero_noise_returns_mean():
    mu = np.random.default_rng(0).normal(size=(3, 5)).astype(np.float32)
    s = LatentSample(Tensor(mu), Tensor(np.random.default_rng(1).normal(size=(3, 5))))
    z = reparameterize(s, np.zeros((3, 5)))
    np.testing.assert_array_equal(z.data, mu)
    assert s.z is z


def test_unit_variance_adds_noise():
    mu, e = np.ones((2, 4), np.float32), np.full((2, 4), 0.75, np.float32)
    z = reparameterize(LatentSample(Tensor(mu), Tensor(np.zeros((2, 4)))), e)
    np.testing.assert_array_equal(z.data, mu + e)


def test_sigma_is_positive():
    s = LatentSample(Tensor(np.zeros((1, 3))), Tensor(np.array([[-50.0, 0.0, 20.0]])))
    assert np.all(s.sigma.data > 0)


def test_reparameterized_moments():
    n = 100_000
    eps = sample_prior(n, 1, seed=2, dtype=np.float64)
    s = LatentSample(Tensor(np.ones((n, 1))), Tensor(np.full((n, 1), np.log(4.0))))
    z = reparameterize(s, eps).data
    assert abs(z.mean() - 1.0) < 0.02
    assert abs(z.var() - 4.0) < 0.1


def test_gradient_flows_to_mu_and_logvar_not_eps():
    mu = Tensor(np.zeros((2, 3)), requires_grad=True)
    logvar = Tensor(np.zeros((2, 3)), requires_grad=True)
    eps = Tensor(np.ones((2, 3)), requires_grad=True)
    z = reparameterize(LatentSample(mu, logvar), eps)
    g_mu, g_lv, g_eps = grad(tsum(z * z), [mu, logvar, eps], allow_unused=True)
    np.testing.assert_allclose(g_mu.data, 2 * z.data)  # dz/dmu = 1: gradient wrt mu equals gradient wrt z
    np.testing.assert_allclose(g_lv.data, 2 * z.data * 0.5 * np.ones((2, 3)))
    assert g_eps is None


def test_reparameterize_shape_mismatch():
    with pytest.raises(ValueError):
        reparameterize(LatentSample(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3)))), np.zeros((2, 4)))


def test_prior_is_seeded_and_standard():
    np.testing.assert_array_equal(sample_prior(4, 8, 7), sample_prior(4, 8, 7))
    z = sample_prior(1000, 100, 3, dtype=np.float64)
    assert abs(z.mean()) < 0.02
    assert abs(z.var() - 1.0) < 0.03


def test_tile_latent():
    np.testing.assert_array_equal(tile_latent(Tensor(np.array([[3.0]])), 2, 2).data, np.full((1, 1, 2, 2), 3.0))
    z = np.random.default_rng(4).normal(size=(2, 5))
    t = tile_latent(Tensor(z), 3, 4).data
    assert t.shape == (2, 5, 3, 4)
    np.testing.assert_array_equal(np.ptp(t, axis=(2, 3)), 0.0)  # every position identical, so zero variance
    np.testing.assert_array_equal(t[:, :, 2, 1], z)
    np.testing.assert_allclose(t.mean(axis=(2, 3)), z, rtol=1e-15)


def test_concat_inputs_order_and_roundtrip():
    rng = np.random.default_rng(5)
    img = rng.normal(size=(2, 3, 4, 4)).astype(np.float32)
    mask = (rng.random((1, 1, 4, 4)) > 0.5).astype(np.float32)
    z = tile_latent(Tensor(rng.normal(size=(2, 64)).astype(np.float32)), 4, 4)
    x = concat_inputs(img, mask, z).data
    assert x.shape[1] == 68
    np.testing.assert_array_equal(x[:, :3], img)
    np.testing.assert_array_equal(x[:, 3:4], np.broadcast_to(mask, (2, 1, 4, 4)))
    np.testing.assert_array_equal(x[:, 4:], z.data)
    again = concat_inputs(x[:, :3], x[:, 3:4], x[:, 4:]).data
    np.testing.assert_array_equal(again, x)


def test_concat_inputs_shape_mismatch():
    with pytest.raises(ValueError):
        concat_inputs(np.zeros((2, 3, 4, 4)), np.zeros((2, 1, 5, 4)), np.zeros((2, 8, 4, 4)))
