import numpy as np
import pytest

from piigan.data import make_center_mask
from piigan.engine import Tensor, grad, tsum
from piigan.latent import tile_latent
from piigan.nets import Critic, CriticNets, Extractor, Generator, composite, critic_forward, crop, hole_box


@pytest.fixture(scope="module")
def nets():
    return Extractor(seed=0), Generator(seed=1), CriticNets(seed=2)


def test_extractor_flatten_width_at_32px(nets):
    e = nets[0]
    assert e.feature_dim == 4 * 4 * 256
    x = np.random.default_rng(0).uniform(-1, 1, (2, 3, 32, 32))
    assert e.features(x).shape == (2, 4096)
    s = e(x)
    assert s.mu.shape == s.logvar.shape == (2, 64)


def test_extractor_zero_params_give_zero_posterior():
    e = Extractor(seed=0).fill_(0.0)
    s = e(np.zeros((1, 3, 32, 32)))
    np.testing.assert_array_equal(s.mu.data, 0.0)
    np.testing.assert_array_equal(s.logvar.data, 0.0)


def test_extractor_distinguishes_images(nets):
    rng = np.random.default_rng(1)
    for _ in range(10):
        a, b = rng.uniform(-1, 1, (2, 1, 3, 32, 32))
        assert not np.array_equal(nets[0](a).mu.data, nets[0](b).mu.data)


def test_extractor_rejects_bad_sizes(nets):
    with pytest.raises(ValueError):
        nets[0](np.zeros((1, 3, 30, 30)))


def test_extractor_heads_are_independent():
    e = Extractor(seed=3)
    x = np.random.default_rng(2).uniform(-1, 1, (2, 3, 32, 32))
    before = e(x)
    e.params["fc_mu.weight"], e.params["fc_logvar.weight"] = e.params["fc_logvar.weight"], e.params["fc_mu.weight"]
    e.params["fc_mu.bias"], e.params["fc_logvar.bias"] = e.params["fc_logvar.bias"], e.params["fc_mu.bias"]
    after = e(x)
    np.testing.assert_array_equal(after.mu.data, before.logvar.data)
    np.testing.assert_array_equal(after.logvar.data, before.mu.data)


def generator_inputs(rng, n=2, size=32, j=64):
    img = rng.uniform(-1, 1, (n, 3, size, size)).astype(np.float32)
    mask = make_center_mask(size, size, size // 2, size // 2)
    return img * mask + (1 - mask), mask


def test_generator_shape_and_bounds(nets):
    rng = np.random.default_rng(3)
    img, mask = generator_inputs(rng)
    z = tile_latent(Tensor(rng.normal(size=(2, 64)).astype(np.float32) * 50), 32, 32)
    out = nets[1](img, mask, z)
    assert out.shape == img.shape
    assert np.abs(out.data).max() <= 1.0


def test_generator_responds_to_z(nets):
    rng = np.random.default_rng(4)
    img, mask = generator_inputs(rng)
    a = nets[1](img, mask, tile_latent(Tensor(rng.normal(size=(2, 64)).astype(np.float32)), 32, 32))
    b = nets[1](img, mask, tile_latent(Tensor(rng.normal(size=(2, 64)).astype(np.float32)), 32, 32))
    assert np.abs(a.data - b.data).mean() > 0


def test_generator_zero_params_output_zero():
    g = Generator(seed=0).fill_(0.0)
    img, mask = generator_inputs(np.random.default_rng(5))
    out = g(img, mask, tile_latent(Tensor(np.ones((2, 64), np.float32)), 32, 32))
    np.testing.assert_array_equal(out.data, 0.0)


def test_generator_gradient_reaches_z(nets):
    rng = np.random.default_rng(6)
    img, mask = generator_inputs(rng)
    z = Tensor(rng.normal(size=(2, 64)).astype(np.float32), requires_grad=True)
    (g,) = grad(tsum(nets[1](img, mask, tile_latent(z, 32, 32))), [z])
    assert np.abs(g.data).max() > 0


def test_generator_rejects_channel_mismatch(nets):
    img, mask = generator_inputs(np.random.default_rng(7))
    with pytest.raises(ValueError):
        nets[1](img, mask, tile_latent(Tensor(np.ones((2, 8))), 32, 32))


def test_critic_zero_params_score_zero():
    c = Critic(3, 16, (8, 8)).fill_(0.0)
    np.testing.assert_array_equal(c(np.ones((3, 3, 16, 16))).data, np.zeros(3))


def test_local_critic_ignores_pixels_outside_crop(nets):
    critics = nets[2]
    mask = make_center_mask(32, 32, 16, 16)
    box = hole_box(mask)
    rng = np.random.default_rng(8)
    a = rng.uniform(-1, 1, (2, 3, 32, 32)).astype(np.float32)
    b = np.where(mask == 1, rng.uniform(-1, 1, a.shape), a).astype(np.float32)
    _, la = critic_forward(critics, a, crop(a, box))
    _, lb = critic_forward(critics, b, crop(b, box))
    np.testing.assert_array_equal(la.data, lb.data)


def test_scores_change_with_hole_content(nets):
    critics = nets[2]
    box = hole_box(make_center_mask(32, 32, 16, 16))
    rng = np.random.default_rng(9)
    for _ in range(10):
        a = rng.uniform(-1, 1, (1, 3, 32, 32)).astype(np.float32)
        b = a.copy()
        b[..., 8:24, 8:24] = rng.uniform(-1, 1, (1, 3, 16, 16))
        ga, la = critic_forward(critics, a, crop(a, box))
        gb, lb = critic_forward(critics, b, crop(b, box))
        assert ga.item() != gb.item() and la.item() != lb.item()


def test_crop_larger_than_image_fails(nets):
    with pytest.raises(ValueError):
        critic_forward(nets[2], np.zeros((1, 3, 16, 16)), np.zeros((1, 3, 32, 32)))


def test_composite_cases():
    rng = np.random.default_rng(10)
    raw, gen = rng.normal(size=(2, 2, 3, 8, 8)).astype(np.float32)
    np.testing.assert_array_equal(composite(raw, gen, np.ones((1, 1, 8, 8))).data, raw)
    np.testing.assert_array_equal(composite(raw, gen, np.zeros((1, 1, 8, 8))).data, gen)
    mask = make_center_mask(8, 8, 4, 4)
    out = composite(raw, gen, mask).data
    known = np.broadcast_to(mask == 1, out.shape)
    np.testing.assert_array_equal(out[known], raw[known])
    np.testing.assert_array_equal(out[~known], gen[~known])
    np.testing.assert_array_equal(composite(raw, out, mask).data, out)
    with pytest.raises(ValueError):
        composite(raw, gen, np.full((1, 1, 8, 8), 0.5))
