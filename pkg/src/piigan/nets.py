"""Extractor, generator and the global/local Wasserstein critics."""
from __future__ import annotations

import copy
import math

import numpy as np

from .engine import Tensor, as_tensor, conv2d, conv2d_constant_planes, conv2d_transpose, elu, flatten, getitem, linear, reshape, tanh, where
from .latent import LatentSample, concat_inputs


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


class Network:
    """A named, ordered collection of trainable parameters."""

    def __init__(self, dtype=np.float32):
        self.params: dict[str, Tensor] = {}
        self.dtype = np.dtype(dtype)

    def _conv(self, rng, name: str, c_out: int, c_in: int, k: int) -> None:
        w = rng.normal(0.0, 1.0 / math.sqrt(c_in * k * k), (c_out, c_in, k, k))
        self.params[f"{name}.weight"] = Tensor(w.astype(self.dtype), requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(c_out, self.dtype), requires_grad=True)

    def _deconv(self, rng, name: str, c_in: int, c_out: int, k: int, stride: int) -> None:
        # each output pixel receives (k / stride)^2 taps per input channel
        fan_in = c_in * (k // stride) ** 2
        w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), (c_in, c_out, k, k))
        self.params[f"{name}.weight"] = Tensor(w.astype(self.dtype), requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(c_out, self.dtype), requires_grad=True)

    def _fc(self, rng, name: str, d_out: int, d_in: int, scale: float = 1.0) -> None:
        w = rng.normal(0.0, scale / math.sqrt(d_in), (d_out, d_in))
        self.params[f"{name}.weight"] = Tensor(w.astype(self.dtype), requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(d_out, self.dtype), requires_grad=True)

    def w(self, name: str) -> Tensor:
        return self.params[f"{name}.weight"]

    def b(self, name: str) -> Tensor:
        return self.params[f"{name}.bias"]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    def fill_(self, value: float) -> Network:
        for p in self.params.values():
            p.data[...] = value
        return self

    def astype(self, dtype) -> Network:
        other = copy.copy(self)
        other.dtype = np.dtype(dtype)
        other.params = {k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in self.params.items()}
        return other

    def detached(self) -> Network:
        """A view sharing this network's arrays whose parameters receive no gradient."""
        other = copy.copy(self)
        other.params = {k: v.detach() for k, v in self.params.items()}
        return other

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"{k}: shape {arrays[k].shape} != {p.shape}")
            p.data = np.array(arrays[k], dtype=self.dtype)


class Extractor(Network):
    """Four 5x5 ELU convolutions (strides 2, 2, 2, 1), flatten, then mean and log-variance heads."""

    strides = (2, 2, 2, 1)

    def __init__(
        self,
        in_channels: int = 3,
        latent_dim: int = 64,
        resolution: int = 32,
        widths=(64, 128, 256, 256),
        seed=None,
        dtype=np.float32,
    ):
        super().__init__(dtype)
        if resolution % 8:
            raise ValueError(f"extractor resolution must be divisible by 8, got {resolution}")
        rng = _rng(seed)
        self.in_channels = in_channels
        self.latent_dim = latent_dim
        self.resolution = resolution
        self.widths = tuple(widths)
        c = in_channels
        for i, width in enumerate(self.widths):
            self._conv(rng, f"conv{i + 1}", width, c, 5)
            c = width
        self.feature_dim = self.widths[-1] * (resolution // 8) ** 2
        self._fc(rng, "fc_mu", latent_dim, self.feature_dim)
        self._fc(rng, "fc_logvar", latent_dim, self.feature_dim, scale=0.1)

    def features(self, image) -> Tensor:
        """Flattened output of the convolution stack, (N, widths[-1] * H/8 * W/8)."""
        x = as_tensor(image)
        if x.ndim != 4 or x.shape[2] % 8 or x.shape[3] % 8:
            raise ValueError(f"extractor input must be (N, C, H, W) with H, W divisible by 8, got {x.shape}")
        for i, s in enumerate(self.strides):
            name = f"conv{i + 1}"
            x = elu(conv2d(x, self.w(name), self.b(name), stride=s))
        return flatten(x)

    def __call__(self, image) -> LatentSample:
        h = self.features(image)
        if h.shape[1] != self.feature_dim:
            raise ValueError(f"extractor built for {self.resolution}px inputs, got {tuple(as_tensor(image).shape)}")
        mu = linear(h, self.w("fc_mu"), self.b("fc_mu"))
        logvar = linear(h, self.w("fc_logvar"), self.b("fc_logvar"))
        return LatentSample(mu, logvar)


class Generator(Network):
    """Encoder to 1/4 resolution, dilated bottleneck, transposed-conv decoder, tanh output.

    Input channels are [image, mask, tiled z] in that order.
    """

    def __init__(
        self,
        image_channels: int = 3,
        latent_dim: int = 64,
        widths=(32, 64, 64),
        dilations=(2, 4, 8),
        seed=None,
        dtype=np.float32,
    ):
        super().__init__(dtype)
        rng = _rng(seed)
        self.image_channels = image_channels
        self.latent_dim = latent_dim
        self.dilations = tuple(dilations)
        w0, w1, w2 = widths
        self._conv(rng, "enc1", w0, image_channels + 1 + latent_dim, 3)
        self._conv(rng, "enc2", w1, w0, 3)
        self._conv(rng, "enc3", w2, w1, 3)
        for d in self.dilations:
            self._conv(rng, f"dil{d}", w2, w2, 3)
        self._deconv(rng, "dec1", w2, w1, 4, 2)
        self._deconv(rng, "dec2", w1, w0, 4, 2)
        self._conv(rng, "out", image_channels, w0, 3)

    def forward_stack(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.image_channels + 1 + self.latent_dim:
            raise ValueError(f"generator expects {self.image_channels + 1 + self.latent_dim} channels, got {x.shape[1]}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ValueError(f"generator input spatial dims must be divisible by 4, got {x.shape[2:]}")
        return self._trunk(elu(conv2d(x, self.w("enc1"), self.b("enc1"))))

    def _trunk(self, x: Tensor) -> Tensor:
        x = elu(conv2d(x, self.w("enc2"), self.b("enc2"), stride=2))
        x = elu(conv2d(x, self.w("enc3"), self.b("enc3"), stride=2))
        for d in self.dilations:
            x = elu(conv2d(x, self.w(f"dil{d}"), self.b(f"dil{d}"), dilation=d))
        x = elu(conv2d_transpose(x, self.w("dec1"), self.b("dec1"), stride=2))
        x = elu(conv2d_transpose(x, self.w("dec2"), self.b("dec2"), stride=2))
        return tanh(conv2d(x, self.w("out"), self.b("out")))

    def __call__(self, masked_image, mask, z_map) -> Tensor:
        return self.forward_stack(concat_inputs(masked_image, mask, z_map))

    def forward_latent(self, masked_image, mask, z) -> Tensor:
        """Same as calling with the tiled ``z``, but the latent planes of the first conv cost O(N J) instead of O(N J H W)."""
        z = as_tensor(z)
        x = as_tensor(masked_image)
        n, _, h, w = x.shape
        if z.ndim != 2 or z.shape != (n, self.latent_dim):
            raise ValueError(f"z must be ({n}, {self.latent_dim}), got {z.shape}")
        if h % 4 or w % 4:
            raise ValueError(f"generator input spatial dims must be divisible by 4, got {(h, w)}")
        k = self.image_channels + 1
        planes = concat_inputs(x, mask)
        weight = self.w("enc1")
        y = conv2d(planes, getitem(weight, (slice(None), slice(0, k))), self.b("enc1"))
        y = y + conv2d_constant_planes(z, getitem(weight, (slice(None), slice(k, None))), (h, w))
        return self._trunk(elu(y))


class Critic(Network):
    """Strided 5x5 ELU convolutions and a linear head; one unbounded score per sample."""

    def __init__(self, in_channels: int = 3, input_size: int = 32, widths=(32, 64, 64, 64), seed=None, dtype=np.float32):
        super().__init__(dtype)
        rng = _rng(seed)
        self.input_size = input_size
        self.widths = tuple(widths)
        c, size = in_channels, input_size
        for i, width in enumerate(self.widths):
            self._conv(rng, f"conv{i + 1}", width, c, 5)
            c, size = width, math.ceil(size / 2)
        self._fc(rng, "fc", 1, c * size * size)

    def __call__(self, image) -> Tensor:
        x = as_tensor(image)
        if x.ndim != 4 or x.shape[2:] != (self.input_size, self.input_size):
            raise ValueError(f"critic expects {self.input_size}x{self.input_size} inputs, got {x.shape}")
        for i in range(len(self.widths)):
            name = f"conv{i + 1}"
            x = elu(conv2d(x, self.w(name), self.b(name), stride=2))
        return reshape(linear(flatten(x), self.w("fc"), self.b("fc")), (x.shape[0],))


def hole_box(mask) -> tuple[int, int, int, int]:
    """Bounding box (row0, row1, col0, col1), half-open, of the zero pixels in a mask."""
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    holes = m.reshape(-1, *m.shape[-2:]).min(axis=0) == 0
    rows = np.flatnonzero(holes.any(axis=1))
    cols = np.flatnonzero(holes.any(axis=0))
    if rows.size == 0:
        raise ValueError("mask has no hole")
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def crop(image, box: tuple[int, int, int, int]) -> Tensor:
    r0, r1, c0, c1 = box
    image = as_tensor(image)
    if r0 < 0 or c0 < 0 or r1 > image.shape[2] or c1 > image.shape[3]:
        raise ValueError(f"crop {box} exceeds image of shape {image.shape}")
    return getitem(image, (slice(None), slice(None), slice(r0, r1), slice(c0, c1)))


class CriticNets:
    """Global critic over the full frame and local critic over the hole crop."""

    def __init__(self, image_channels: int = 3, resolution: int = 32, hole: int = 16, seed=None, dtype=np.float32):
        rng = _rng(seed)
        self.global_critic = Critic(image_channels, resolution, (32, 64, 64, 64), rng, dtype)
        self.local_critic = Critic(image_channels, hole, (32, 64, 64), rng, dtype)

    def networks(self) -> dict[str, Network]:
        return {"critic_global": self.global_critic, "critic_local": self.local_critic}

    def astype(self, dtype) -> CriticNets:
        other = copy.copy(self)
        other.global_critic = self.global_critic.astype(dtype)
        other.local_critic = self.local_critic.astype(dtype)
        return other


def critic_forward(critics: CriticNets, image, hole_crop) -> tuple[Tensor, Tensor]:
    """(global score, local score), each of shape (N,)."""
    image, hole_crop = as_tensor(image), as_tensor(hole_crop)
    if hole_crop.shape[2] > image.shape[2] or hole_crop.shape[3] > image.shape[3]:
        raise ValueError(f"crop {hole_crop.shape} larger than image {image.shape}")
    return critics.global_critic(image), critics.local_critic(hole_crop)


def composite(raw, generated, mask) -> Tensor:
    """Known pixels (mask == 1) from ``raw`` bit-exactly, hole pixels from ``generated``."""
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask values must be 0 or 1")
    raw, generated = as_tensor(raw), as_tensor(generated)
    if raw.shape != generated.shape:
        raise ValueError(f"shape mismatch: raw {raw.shape} vs generated {generated.shape}")
    return where(m == 1, raw, generated)
