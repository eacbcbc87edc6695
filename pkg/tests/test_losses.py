import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import kl_monte_carlo, l1_loop

from piigan.data import make_center_mask
from piigan.engine import NonFiniteError, Tensor, tanh, tsum
from piigan.losses import (
    LossReport,
    LossWeights,
    consistency_loss,
    critic_loss,
    generator_adv_loss,
    gradient_penalty,
    kl_divergence,
    latent_consistency_loss,
    total_objective,
)


# -- KL ---------------------------------------------------------------------------

def test_kl_zero_at_prior():
    assert kl_divergence(np.zeros((4, 8)), np.zeros((4, 8))).item() == 0.0


@pytest.mark.parametrize("mu,logvar,expected", [(1.0, 0.0, 0.5), (0.0, math.log(2.0), 0.5 * (2 - 1 - math.log(2)))])
def test_kl_examples_against_monte_carlo(mu, logvar, expected):
    value = kl_divergence(np.array([[mu]]), np.array([[logvar]], np.float64)).item()
    assert value == pytest.approx(expected, rel=1e-6)
    assert value == pytest.approx(kl_monte_carlo(mu, logvar), rel=1e-2)


def test_kl_sums_latent_dims_and_averages_batch():
    mu = np.array([[1.0, 1.0], [0.0, 0.0]])
    assert kl_divergence(mu, np.zeros((2, 2))).item() == pytest.approx((1.0 + 0.0) / 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    mu, lv = rng.uniform(-2, 2, (2, 3, 5))
    assert kl_divergence(mu, lv).item() >= 0


def test_kl_rejects_non_finite_and_bad_shapes():
    with pytest.raises(NonFiniteError):
        kl_divergence(np.array([[np.nan]]), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        kl_divergence(np.zeros((2, 3)), np.zeros((2, 4)))


# -- L1 --------------------------------------------------------------------------

def test_consistency_examples():
    a = np.random.default_rng(0).normal(size=(2, 3, 4, 4))
    assert consistency_loss(a, a).item() == 0.0
    assert consistency_loss(a + 0.25, a).item() == pytest.approx(0.25, abs=1e-12)
    b = np.random.default_rng(1).normal(size=a.shape)
    assert consistency_loss(a, b).item() == pytest.approx(l1_loop(a, b), abs=1e-6)
    assert latent_consistency_loss(a[:, 0, 0], b[:, 0, 0]).item() == pytest.approx(l1_loop(a[:, 0, 0], b[:, 0, 0]), abs=1e-6)


def test_sample_reduction_is_per_sample_norm():
    a = np.random.default_rng(2).normal(size=(3, 2, 4, 4))
    b = np.zeros_like(a)
    expected = np.abs(a).reshape(3, -1).sum(axis=1).mean()
    assert consistency_loss(a, b, "sample").item() == pytest.approx(expected)
    assert consistency_loss(a + 0.25, a, "sample").item() == pytest.approx(0.25 * 32)
    assert consistency_loss(a + 0.25, a, "sample", 16.0).item() == pytest.approx(0.25 * 32 * 16)
    assert consistency_loss(a + 0.25, a, "mean", 2.0).item() == pytest.approx(0.5)
    with pytest.raises(ValueError):
        consistency_loss(a, b, "sum")


def test_latent_consistency_sample_reduction_sums_latent_dims():
    z = np.random.default_rng(3).normal(size=(4, 6))
    assert latent_consistency_loss(z + 0.5, z, "sample").item() == pytest.approx(3.0)


def test_consistency_shape_mismatch():
    with pytest.raises(ValueError):
        consistency_loss(np.zeros((1, 2)), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        latent_consistency_loss(np.zeros((1, 2, 3)), np.zeros((1, 2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_consistency_is_a_metric(seed):
    a, b, c = np.random.default_rng(seed).normal(size=(3, 2, 5))
    ab, ba = consistency_loss(a, b).item(), consistency_loss(b, a).item()
    assert ab == ba
    assert ab <= consistency_loss(a, c).item() + consistency_loss(c, b).item() + 1e-12


# -- gradient penalty ------------------------------------------------------------

def batch(seed, shape=(3, 1, 4, 4)):
    rng = np.random.default_rng(seed)
    return rng.normal(size=shape), rng.normal(size=shape), rng.random(shape[0])


def constant_critic(x):
    return tsum(x * 0.0, axis=(1, 2, 3)) + 2.5


def test_penalty_of_constant_critic_is_one():
    real, fake, u = batch(0)
    assert gradient_penalty(constant_critic, real, fake, u).item() == pytest.approx(1.0, abs=1e-6)


def test_penalty_of_sum_critic():
    real, fake, u = batch(1)
    p = real[0].size
    value = gradient_penalty(lambda x: tsum(x, axis=(1, 2, 3)), real, fake, u).item()
    assert value == pytest.approx((math.sqrt(p) - 1) ** 2, rel=1e-6)


def test_penalty_of_unit_norm_linear_critic_is_zero():
    real, fake, u = batch(2)
    w = np.random.default_rng(3).normal(size=real.shape[1:])
    w = Tensor(w / np.linalg.norm(w))
    assert gradient_penalty(lambda x: tsum(x * w, axis=(1, 2, 3)), real, fake, u).item() <= 1e-6


def test_masked_penalty_single_pixel():
    real, fake, u = batch(4)
    mask = np.ones((1, 1, 4, 4))
    mask[..., 2, 1] = 0
    critic = lambda x: tsum(x * Tensor(1 - mask), axis=(1, 2, 3))
    assert gradient_penalty(critic, real, fake, u, mask).item() == pytest.approx(0.0, abs=1e-12)


def test_masked_penalty_ignores_known_region_for_hole_only_critic():
    rng = np.random.default_rng(5)
    mask = make_center_mask(8, 8, 4, 4).astype(np.float64)
    w = Tensor(rng.normal(size=(1, 3, 8, 8)))
    critic = lambda x: tsum(tanh(x * Tensor(1 - mask)) * w, axis=(1, 2, 3))
    real, fake, u = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(2, 3, 8, 8)), rng.random(2)
    base = gradient_penalty(critic, real, fake, u, mask).item()
    noise = rng.normal(size=real.shape) * mask
    moved = gradient_penalty(critic, real + noise, fake - noise, u, mask).item()
    assert abs(moved - base) <= 1e-6


def test_penalty_rejects_vector_critic():
    real, fake, u = batch(6)
    with pytest.raises(ValueError):
        gradient_penalty(lambda x: x, real, fake, u)


def test_critic_loss_of_zero_critic_is_lambda():
    real, fake, u = batch(7)
    zero = lambda x: tsum(x * 0.0, axis=(1, 2, 3))
    assert critic_loss(zero, real, fake, u, gp_lambda=10.0).item() == pytest.approx(10.0)


def test_critic_loss_linear_closed_form():
    rng = np.random.default_rng(8)
    real, fake, u = rng.normal(size=(4, 2, 3, 3)), rng.normal(size=(4, 2, 3, 3)), rng.random(4)
    w = rng.normal(size=(2, 3, 3))
    critic = lambda x: tsum(x * Tensor(w), axis=(1, 2, 3))
    d = lambda x: (x * w).sum(axis=(1, 2, 3))
    expected = d(fake).mean() - d(real).mean() + 10.0 * (np.linalg.norm(w) - 1) ** 2
    assert critic_loss(critic, real, fake, u).item() == pytest.approx(expected, rel=1e-9)
    assert generator_adv_loss(critic, fake).item() == pytest.approx(-d(fake).mean())


def test_wasserstein_term_vanishes_for_equal_inputs():
    real, _, u = batch(9)
    w = np.random.default_rng(10).normal(size=real.shape[1:])
    critic = lambda x: tsum(x * Tensor(w / np.linalg.norm(w)), axis=(1, 2, 3))
    assert critic_loss(critic, real, real, u).item() == pytest.approx(0.0, abs=1e-9)


# -- total ---------------------------------------------------------------------------

NAMES = ("kl_e", "kl_g", "cons_e", "cons_g", "adv_global", "adv_local")


def test_total_examples():
    w = LossWeights()
    assert total_objective({k: 0.0 for k in NAMES}, w) == 0.0
    assert total_objective({k: 1.0 for k in NAMES}, w) == pytest.approx(23.8)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=6, max_size=6), st.lists(st.floats(0, 20), min_size=3, max_size=3))
def test_total_matches_recomputation(values, weights):
    w = LossWeights(*weights)
    p = dict(zip(NAMES, values))
    expected = w.alpha_kl * p["kl_e"] + w.alpha_kl * p["kl_g"] + w.alpha_c * p["cons_e"] + w.alpha_c * p["cons_g"]
    expected += w.alpha_adv * p["adv_global"] + w.alpha_adv * p["adv_local"]
    assert total_objective(p, w) == pytest.approx(expected, abs=1e-9)
    report = LossReport.from_parts(p, w)
    assert abs(report.total - expected) <= 1e-5 * max(1.0, abs(expected))


def test_total_names_non_finite_term():
    parts = {k: 1.0 for k in NAMES}
    parts["adv_local"] = math.inf
    with pytest.raises(NonFiniteError, match="adv_local"):
        total_objective(parts, LossWeights())


def test_weights_validated():
    assert LossWeights() == LossWeights(10.0, 0.9, 1.0, 10.0)
    with pytest.raises(ValueError):
        LossWeights(alpha_kl=-1.0)


def test_report_csv_row():
    r = LossReport(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)
    assert LossReport.CSV_HEADER == "iteration,kl_e,kl_g,cons_e,cons_g,latent_cons,adv_global,adv_local,total"
    assert r.csv_row(3) == "3,1.0,2.0,3.0,4.0,5.0,6.0,7.0,8.0"
    assert r.is_finite()
