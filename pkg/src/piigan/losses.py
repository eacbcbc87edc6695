"""Training objectives: KL regularizer, L1 consistency, WGAN-GP critic losses."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from .engine import NonFiniteError, Tensor, as_tensor, exp, grad, sqrt, tabs, tsum

Critic = Callable[[Tensor], Tensor]


@dataclass(frozen=True)
class LossWeights:
    alpha_kl: float = 10.0
    alpha_c: float = 0.9
    alpha_adv: float = 1.0
    gp_lambda: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{f.name} must be a finite nonnegative number, got {v}")


@dataclass
class LossReport:
    """Per-step scalar losses. ``total`` follows the weighted objective grouping."""

    kl_e: float
    kl_g: float
    cons_e: float
    cons_g: float
    latent_cons: float
    adv_global: float
    adv_local: float
    total: float

    CSV_HEADER = "iteration,kl_e,kl_g,cons_e,cons_g,latent_cons,adv_global,adv_local,total"

    @classmethod
    def from_parts(cls, parts: dict[str, float], weights: LossWeights) -> LossReport:
        return cls(
            kl_e=parts["kl_e"],
            kl_g=parts["kl_g"],
            cons_e=parts["cons_e"],
            cons_g=parts["cons_g"],
            latent_cons=parts.get("latent_cons", 0.0),
            adv_global=parts["adv_global"],
            adv_local=parts["adv_local"],
            total=float(total_objective(parts, weights)),
        )

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def csv_row(self, iteration: int) -> str:
        values = [getattr(self, f.name) for f in fields(self)]
        return ",".join([str(iteration)] + [repr(float(v)) for v in values])

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_dict().values())


def _finite(t: Tensor, name: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"{name} has non-finite values")


def kl_divergence(mu, logvar) -> Tensor:
    """Batch mean of KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    if mu.shape != logvar.shape or mu.ndim != 2:
        raise ValueError(f"mu and logvar must share an (N, J) shape, got {mu.shape} and {logvar.shape}")
    _finite(mu, "mu")
    _finite(logvar, "logvar")
    per_dim = 1.0 + logvar - mu * mu - exp(logvar)
    return tsum(per_dim) * (-0.5 / mu.shape[0])


def consistency_loss(a, b, reduction: str = "mean", scale: float = 1.0) -> Tensor:
    """L1 discrepancy times ``scale``.

    ``"mean"`` averages over every element; ``"sample"`` takes the L1 norm
    (sum of absolute differences) of each sample and averages over the batch
    (first) axis.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = tabs(a - b)
    if reduction == "mean":
        return diff.mean() * scale
    if reduction == "sample":
        return tsum(diff) * (scale / a.shape[0])
    raise ValueError(f"unknown reduction {reduction!r}")


def latent_consistency_loss(z_f, z, reduction: str = "mean") -> Tensor:
    z_f, z = as_tensor(z_f), as_tensor(z)
    if z_f.ndim != 2:
        raise ValueError(f"latent codes must be (N, J), got {z_f.shape}")
    return consistency_loss(z_f, z, reduction)


def _scores(critic: Critic, x: Tensor) -> Tensor:
    s = critic(x)
    if s.ndim != 1 or s.shape[0] != x.shape[0]:
        raise ValueError(f"critic must return one score per sample, got shape {s.shape}")
    return s


def gradient_penalty(critic: Critic, real, fake, u, mask=None) -> Tensor:
    """Batch mean of (||grad_x critic(x)||_2 - 1)^2 at x = u*real + (1-u)*fake.

    With ``mask`` (1 = known, 0 = hole) the gradient is multiplied by (1 - mask)
    before the norm, so only hole pixels are penalized. Not scaled by lambda.
    """
    real, fake = as_tensor(real).detach(), as_tensor(fake).detach()
    if real.shape != fake.shape:
        raise ValueError(f"real {real.shape} and fake {fake.shape} differ")
    u = np.asarray(u, dtype=real.dtype).reshape(-1)
    if u.shape[0] != real.shape[0]:
        raise ValueError(f"need one interpolation coefficient per sample, got {u.shape[0]}")
    u = u.reshape((-1,) + (1,) * (real.ndim - 1))
    x_hat = Tensor(u * real.data + (1 - u) * fake.data, requires_grad=True)
    scores = _scores(critic, x_hat)
    (g,) = grad(tsum(scores), [x_hat], create_graph=True)
    if mask is not None:
        m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=real.dtype)
        g = g * Tensor(1.0 - m)
    norms = sqrt(tsum(g * g, axis=tuple(range(1, g.ndim))))
    return ((norms - 1.0) * (norms - 1.0)).mean()


def critic_loss(critic: Critic, real, fake, u, mask=None, gp_lambda: float = 10.0) -> Tensor:
    """E[D(fake)] - E[D(real)] + lambda * penalty, minimized by the critic."""
    real, fake = as_tensor(real).detach(), as_tensor(fake).detach()
    wasserstein = _scores(critic, fake).mean() - _scores(critic, real).mean()
    return wasserstein + gp_lambda * gradient_penalty(critic, real, fake, u, mask)


def generator_adv_loss(critic: Critic, fake) -> Tensor:
    return -_scores(critic, as_tensor(fake)).mean()


def total_objective(parts: dict, weights: LossWeights):
    """alpha_KL (kl_e + kl_g) + alpha_c (cons_e + cons_g) + alpha_adv (adv_global + adv_local).

    Works on floats or Tensors.
    """
    names = ("kl_e", "kl_g", "cons_e", "cons_g", "adv_global", "adv_local")
    for name in names:
        v = parts[name]
        data = v.data if isinstance(v, Tensor) else np.asarray(v)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"loss term {name} is not finite")
    return (
        weights.alpha_kl * (parts["kl_e"] + parts["kl_g"])
        + weights.alpha_c * (parts["cons_e"] + parts["cons_g"])
        + weights.alpha_adv * (parts["adv_global"] + parts["adv_local"])
    )
