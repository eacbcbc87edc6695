"""Finite-difference gradient checks for every differentiable op and network.

All checks run in float64. Each output is reduced to a scalar by a fixed
random weighting, then analytic gradients are compared with central
differences either element by element (small primitives) or on sampled
elements plus one random direction (whole networks).
"""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import engine as E
from .engine import Tensor, grad, set_grad_enabled
from .engine.tensor import power, record_branches, tabs
from .latent import LatentSample, reparameterize, tile_latent
from .losses import gradient_penalty, kl_divergence
from .nets import Critic, Extractor, Generator
from .data import make_center_mask

STEP = 1e-3
TOLERANCE = 1e-2
REL_FLOOR = 1e-3

Fn = Callable[[list[Tensor]], Tensor]


@dataclass
class CheckResult:
    name: str
    trials: int
    checked: int
    skipped: int
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error <= TOLERANCE

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name:<24} trials={self.trials:<3} values={self.checked:<6} skipped={self.skipped:<4} "
            f"max_rel_err={self.max_rel_error:.2e} ({self.seconds:.1f}s)"
        )


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def _scalar_loss(fn: Fn, arrays: list[np.ndarray], weight: np.ndarray | None):
    """Weighted scalar loss and the branch pattern of every piecewise op it ran."""
    with record_branches() as branches:
        out = fn([Tensor(a) for a in arrays])
    value = float(np.sum(out.data * weight)) if weight is not None else out.item()
    return value, branches


def _same_branches(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


MAX_REDRAWS = 20


def check(
    fn: Fn,
    arrays: list[np.ndarray],
    rng: np.random.Generator,
    sample: int | None = None,
    direction: bool = False,
    needs_graph: bool = False,
) -> tuple[float, int, int]:
    """(max relative error, values compared, stencils skipped) for one set of inputs.

    ``sample`` limits the number of elements checked per input (redrawing an
    element whose stencil crosses a kink); ``direction`` adds one random
    unit-length directional derivative over all inputs at once.

    ``needs_graph`` marks functions that differentiate internally (the
    gradient penalty). Their first derivative involves ELU', which has a kink,
    so a stencil on which any ELU/abs/min branch differs from the unperturbed
    evaluation measures nothing and is skipped. Elsewhere ELU is C1 and no
    stencil is skipped.
    """
    arrays = [np.array(a, np.float64) for a in arrays]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(leaves)
    weight = rng.uniform(0.5, 1.5, out.shape) if out.size > 1 else None
    loss = E.tsum(out * Tensor(weight)) if weight is not None else E.tsum(out)
    grads = grad(loss, leaves, allow_unused=True)
    grads = [np.zeros_like(a) if g is None else g.data for a, g in zip(arrays, grads)]

    worst, count, skipped = 0.0, 0, 0
    with set_grad_enabled(needs_graph):
        _, base = _scalar_loss(fn, arrays, weight)
        for k, a in enumerate(arrays):
            flat = a.reshape(-1)
            if sample is None:
                order, want = np.arange(flat.size), flat.size
            else:
                order, want = rng.permutation(flat.size), min(sample, flat.size)
            done, tries = 0, 0
            for i in order:
                if done == want or (sample is not None and tries == want + MAX_REDRAWS):
                    break
                tries += 1
                keep = flat[i]
                flat[i] = keep + STEP
                up, b_up = _scalar_loss(fn, arrays, weight)
                flat[i] = keep - STEP
                down, b_down = _scalar_loss(fn, arrays, weight)
                flat[i] = keep
                if needs_graph and not (_same_branches(base, b_up) and _same_branches(base, b_down)):
                    skipped += 1
                    continue
                worst = max(worst, rel_error(grads[k].reshape(-1)[i], (up - down) / (2 * STEP)))
                count += 1
                done += 1
        if direction:
            for _ in range(MAX_REDRAWS):
                dirs = [rng.standard_normal(a.shape) for a in arrays]
                norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
                dirs = [d / norm for d in dirs]
                up, b_up = _scalar_loss(fn, [a + STEP * d for a, d in zip(arrays, dirs)], weight)
                down, b_down = _scalar_loss(fn, [a - STEP * d for a, d in zip(arrays, dirs)], weight)
                if not needs_graph or (_same_branches(base, b_up) and _same_branches(base, b_down)):
                    analytic = sum(float(np.sum(g * d)) for g, d in zip(grads, dirs))
                    worst = max(worst, rel_error(analytic, (up - down) / (2 * STEP)))
                    count += 1
                    break
                skipped += 1
    return worst, count, skipped


# -- cases ------------------------------------------------------------------------
# Each case builds (fn, input arrays) from a generator; inputs avoid the kinks
# of abs/sqrt/log where a central difference is meaningless.

def _u(rng, *shape, low=-1.0, high=1.0):
    return rng.uniform(low, high, shape)


def _away_from_zero(rng, *shape, margin=0.1):
    x = _u(rng, *shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _positive(rng, *shape):
    return rng.uniform(0.2, 1.0, shape)


def _binary(fn):
    return lambda rng: (lambda t: fn(t[0], t[1]), [_u(rng, 2, 3, 4), _u(rng, 2, 3, 4)])


def _unary(fn, sampler=_u):
    return lambda rng: (lambda t: fn(t[0]), [sampler(rng, 2, 3, 4)])


def _where(rng):
    cond = rng.random((2, 3, 4)) < 0.5
    return (lambda t: E.where(cond, t[0], t[1])), [_u(rng, 2, 3, 4), _u(rng, 2, 3, 4)]


def _power(rng):
    p = float(rng.choice([-1.5, 0.5, 2.0, 3.0]))
    return (lambda t: power(t[0], p)), [_positive(rng, 2, 3, 4)]


def _conv(stride, dilation, padding, x_shape=(2, 2, 6, 6), w_shape=(3, 2, 3, 3)):
    def make(rng):
        fn = lambda t: E.conv2d(t[0], t[1], t[2], stride=stride, dilation=dilation, padding=padding)
        return fn, [_u(rng, *x_shape), _u(rng, *w_shape), _u(rng, w_shape[0])]
    return make


def _conv_transpose(rng):
    fn = lambda t: E.conv2d_transpose(t[0], t[1], t[2], stride=2)
    return fn, [_u(rng, 2, 3, 4, 4), _u(rng, 3, 2, 4, 4), _u(rng, 2)]


def _constant_planes(rng):
    return (lambda t: E.conv2d_constant_planes(t[0], t[1], (5, 6))), [_u(rng, 2, 3), _u(rng, 4, 3, 3, 3)]


def _linear(rng):
    return (lambda t: E.linear(t[0], t[1], t[2])), [_u(rng, 3, 2, 2, 2), _u(rng, 5, 8), _u(rng, 5)]


def _broadcast(rng):
    return (lambda t: E.broadcast_to(t[0], (2, 3, 4, 5))), [_u(rng, 3, 1, 5)]


def _reshape_transpose(rng):
    return (lambda t: E.transpose(E.reshape(t[0], (6, 4)), (1, 0))), [_u(rng, 2, 3, 4)]


def _reductions(rng):
    return (lambda t: E.tsum(t[0], axis=(1, 2)) + E.mean(t[0], axis=(1, 2))), [_u(rng, 2, 3, 4)]


def _matmul(rng):
    return (lambda t: E.matmul(t[0], t[1])), [_u(rng, 3, 4), _u(rng, 4, 5)]


def _concat(rng):
    return (lambda t: E.concat([t[0], t[1]], axis=1)), [_u(rng, 2, 1, 3), _u(rng, 2, 2, 3)]


def _getitem(rng):
    return (lambda t: E.getitem(t[0], (slice(None), slice(1, 3), slice(0, 4, 2)))), [_u(rng, 2, 4, 5)]


def _reparameterize(rng):
    eps = rng.standard_normal((3, 4))
    return (lambda t: reparameterize(LatentSample(t[0], t[1]), eps)), [_u(rng, 3, 4), _u(rng, 3, 4)]


def _kl(rng):
    return (lambda t: kl_divergence(t[0], t[1])), [_u(rng, 3, 4), _u(rng, 3, 4)]


def _tile(rng):
    return (lambda t: tile_latent(t[0], 3, 2)), [_u(rng, 2, 4)]


def _with_params(net, extra: list[np.ndarray], forward):
    names = list(net.params)

    def fn(t):
        saved = dict(net.params)
        for name, tensor in zip(names, t[len(extra):]):
            net.params[name] = tensor
        try:
            return forward(t[: len(extra)])
        finally:
            net.params.update(saved)

    return fn, extra + [net.params[n].data.copy() for n in names]


def _extractor(rng):
    net = Extractor(3, 64, resolution=16, seed=rng).astype(np.float64)

    def forward(t):
        s = net(t[0])
        return E.concat([s.mu, s.logvar], axis=1)

    return _with_params(net, [_u(rng, 2, 3, 16, 16)], forward)


def _generator(rng):
    net = Generator(3, 64, seed=rng).astype(np.float64)
    mask = make_center_mask(16, 16, 8, 8).astype(np.float64)
    return _with_params(net, [_u(rng, 2, 3, 16, 16), _u(rng, 2, 64)], lambda t: net.forward_latent(t[0], mask, t[1]))


def _critic(size, widths):
    def make(rng):
        net = Critic(3, size, widths, seed=rng).astype(np.float64)
        return _with_params(net, [_u(rng, 2, 3, size, size)], lambda t: net(t[0]))
    return make


def _penalty(masked: bool):
    def make(rng):
        net = Critic(3, 8, (4, 4), seed=rng).astype(np.float64)
        real, fake, u = _u(rng, 2, 3, 8, 8), _u(rng, 2, 3, 8, 8), rng.random(2)
        mask = make_center_mask(8, 8, 4, 4).astype(np.float64) if masked else None
        return _with_params(net, [], lambda t: gradient_penalty(net, real, fake, u, mask))
    return make


PRIMITIVES: dict[str, Callable] = {
    "add": _binary(lambda a, b: a + b),
    "sub": _binary(lambda a, b: a - b),
    "mul": _binary(lambda a, b: a * b),
    "div": lambda rng: (lambda t: t[0] / t[1], [_u(rng, 2, 3, 4), _away_from_zero(rng, 2, 3, 4, margin=0.5)]),
    "neg": _unary(lambda a: -a),
    "power": _power,
    "exp": _unary(E.exp),
    "log": _unary(E.log, _positive),
    "tanh": _unary(E.tanh),
    "elu": _unary(E.elu),
    "abs": _unary(tabs, _away_from_zero),
    "sqrt": _unary(E.sqrt, _positive),
    "where": _where,
    "sum_mean": _reductions,
    "broadcast": _broadcast,
    "reshape_transpose": _reshape_transpose,
    "matmul": _matmul,
    "concat": _concat,
    "getitem": _getitem,
    "conv2d_same_s1": _conv(1, 1, "same"),
    "conv2d_same_s2": _conv(2, 1, "same", (2, 3, 8, 8), (4, 3, 5, 5)),
    "conv2d_dilated": _conv(1, 2, "same"),
    "conv2d_valid": _conv(1, 1, "valid"),
    "conv2d_transpose": _conv_transpose,
    "conv2d_constant_planes": _constant_planes,
    "linear": _linear,
    "tile_latent": _tile,
    "reparameterize": _reparameterize,
    "kl_divergence": _kl,
}

NETWORKS: dict[str, Callable] = {
    "extractor": _extractor,
    "generator": _generator,
    "critic_global": _critic(16, (32, 64, 64, 64)),
    "critic_local": _critic(8, (32, 64, 64)),
    "gradient_penalty": _penalty(False),
    "gradient_penalty_masked": _penalty(True),
}
DOUBLE_BACKWARD = {"gradient_penalty", "gradient_penalty_masked"}


def run_gradcheck(seed: int = 0, trials: int = 20, samples_per_tensor: int = 3, names=None) -> list[CheckResult]:
    """Run every case for ``trials`` seeded trials and return one result per case."""
    results = []
    cases = [(n, f, None, False) for n, f in PRIMITIVES.items()]
    cases += [(n, f, samples_per_tensor, True) for n, f in NETWORKS.items()]
    for name, make, sample, direction in cases:
        needs_graph = name in DOUBLE_BACKWARD
        if names is not None and name not in names:
            continue
        start = time.perf_counter()
        worst, count, skipped = 0.0, 0, 0
        for trial in range(trials):
            rng = np.random.default_rng([seed, trial, zlib.crc32(name.encode())])
            fn, arrays = make(rng)
            err, n, s = check(fn, arrays, rng, sample, direction, needs_graph)
            worst, count, skipped = max(worst, err), count + n, skipped + s
        results.append(CheckResult(name, trials, count, skipped, worst, time.perf_counter() - start))
    return results
