"""Style-noise handling: reparameterized sampling, prior draws, tiling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor, as_tensor, broadcast_to, concat, exp, reshape


@dataclass
class LatentSample:
    """Extractor output: posterior mean, log-variance and (once drawn) z, each (N, J)."""

    mu: Tensor
    logvar: Tensor
    z: Tensor | None = None

    @property
    def latent_dim(self) -> int:
        return self.mu.shape[1]

    @property
    def sigma(self) -> Tensor:
        return exp(self.logvar * 0.5)


def reparameterize(sample: LatentSample, eps) -> Tensor:
    """z = mu + exp(logvar / 2) * eps. ``eps`` is treated as a constant."""
    eps = np.asarray(eps.data if isinstance(eps, Tensor) else eps, dtype=sample.mu.dtype)
    if eps.shape != sample.mu.shape or sample.logvar.shape != sample.mu.shape:
        raise ValueError(
            f"shape mismatch: mu {sample.mu.shape}, logvar {sample.logvar.shape}, eps {eps.shape}"
        )
    z = sample.mu + sample.sigma * Tensor(eps)
    sample.z = z
    return z


def sample_prior(n: int, latent_dim: int, seed=None, dtype=np.float32) -> np.ndarray:
    """Standard-normal draws of shape (n, latent_dim).

    ``seed`` may be an int, a ``numpy.random.Generator`` (consumed in place) or None.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal((n, latent_dim)).astype(dtype)


def tile_latent(z, height: int, width: int) -> Tensor:
    """Replicate each latent vector over an (height, width) grid: (N, J) -> (N, J, H, W)."""
    if height < 1 or width < 1:
        raise ValueError(f"tile size must be positive, got {height}x{width}")
    z = as_tensor(z)
    n, j = z.shape
    return broadcast_to(reshape(z, (n, j, 1, 1)), (n, j, height, width))


def concat_inputs(masked_image, mask, z_map=None) -> Tensor:
    """Channel-wise [image, mask, z_map] stack fed to the generator; [image, mask] if ``z_map`` is None."""
    masked_image, mask = as_tensor(masked_image), as_tensor(mask)
    n, _, h, w = masked_image.shape
    if mask.ndim == 4 and mask.shape[0] == 1 and n > 1:
        mask = Tensor(np.broadcast_to(mask.data, (n,) + mask.shape[1:]).copy())
    checks = [("mask", mask)] if z_map is None else [("mask", mask), ("z_map", as_tensor(z_map))]
    for name, t in checks:
        if t.ndim != 4 or t.shape[0] != n or t.shape[2:] != (h, w):
            raise ValueError(f"{name} shape {t.shape} does not match image {masked_image.shape}")
    if mask.shape[1] != 1:
        raise ValueError(f"mask must have one channel, got {mask.shape[1]}")
    dtype = masked_image.dtype
    parts = [masked_image, _cast(mask, dtype)]
    if z_map is not None:
        parts.append(_cast(as_tensor(z_map), dtype))
    return concat(parts, axis=1)


def _cast(t: Tensor, dtype) -> Tensor:
    if t.dtype == dtype:
        return t
    if t.requires_grad:
        raise TypeError(f"dtype mismatch {t.dtype} vs {dtype} on a tensor that requires grad")
    return Tensor(t.data.astype(dtype))
