"""Two-path training loop: reconstruction from extracted style, generation from prior noise."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint as ckpt
from .config import TrainConfig, parse_config
from .data import apply_mask, make_center_mask
from .engine import AdamState, NonFiniteError, Tensor, adam_step, no_grad
from .latent import reparameterize, sample_prior
from .losses import (
    LossReport,
    consistency_loss,
    critic_loss,
    generator_adv_loss,
    kl_divergence,
    latent_consistency_loss,
    total_objective,
)
from .nets import CriticNets, Extractor, Generator, Network, composite, crop, hole_box

log = logging.getLogger(__name__)

Hook = Callable[[int, dict], None]


@dataclass
class TrainState:
    config: TrainConfig
    extractor: Extractor
    generator: Generator
    critics: CriticNets
    optimizers: dict[str, AdamState] = field(default_factory=dict)
    iteration: int = 0

    @classmethod
    def initialize(cls, config: TrainConfig) -> TrainState:
        rng = np.random.default_rng([config.seed, 0])
        state = cls(
            config,
            Extractor(3, config.latent_dim, config.resolution, seed=rng),
            Generator(3, config.latent_dim, seed=rng),
            CriticNets(3, config.resolution, config.hole_size, seed=rng),
        )
        for name in state.networks():
            state.optimizers[name] = AdamState(config.lr, config.beta1, config.beta2)
        return state

    def networks(self) -> dict[str, Network]:
        return {"extractor": self.extractor, "generator": self.generator, **self.critics.networks()}

    # -- persistence ------------------------------------------------------------
    def save(self, path) -> None:
        records = {"state/iteration": ckpt.encode_int(self.iteration), "rng/seed": ckpt.encode_int(self.config.seed)}
        for net_name, net in self.networks().items():
            for k, p in net.params.items():
                records[f"param/{net_name}/{k}"] = p.data
        for net_name, opt in self.optimizers.items():
            records[f"adam/{net_name}/t"] = ckpt.encode_int(opt.t)
            for k in opt.m:
                records[f"adam/{net_name}/m/{k}"] = opt.m[k]
                records[f"adam/{net_name}/v/{k}"] = opt.v[k]
        ckpt.write_records(path, self.config.dumps(), records)

    @classmethod
    def load(cls, path) -> TrainState:
        text, records = ckpt.read_records(path)
        config = parse_config(text, f"{path}:config")
        state = cls.initialize(config)
        if ckpt.decode_int(records["rng/seed"]) != config.seed:
            raise ckpt.CheckpointError(f"{path}: RNG seed does not match config echo")
        state.iteration = ckpt.decode_int(records["state/iteration"])
        for net_name, net in state.networks().items():
            prefix = f"param/{net_name}/"
            net.load_state_dict({k[len(prefix):]: v for k, v in records.items() if k.startswith(prefix)})
            opt = state.optimizers[net_name]
            opt.t = ckpt.decode_int(records[f"adam/{net_name}/t"])
            for k in net.params:
                m = records.get(f"adam/{net_name}/m/{k}")
                if m is not None:
                    opt.m[k] = m.copy()
                    opt.v[k] = records[f"adam/{net_name}/v/{k}"].copy()
        return state


def complete(generator: Generator, image, mask: np.ndarray, z) -> tuple[Tensor, Tensor]:
    """Run the generator on the white-filled input; return (raw output, composite)."""
    image = image.data if isinstance(image, Tensor) else np.asarray(image)
    masked = apply_mask(image, mask)
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, image.dtype))
    out = generator.forward_latent(masked, mask, z)
    return out, composite(image, out, mask)


class Trainer:
    """Runs training iterations on a fixed, normalized image array (n, 3, R, R)."""

    def __init__(self, config: TrainConfig, images: np.ndarray, state: TrainState | None = None):
        images = np.asarray(images, np.float32)
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2:] != (config.resolution,) * 2:
            raise ValueError(f"dataset must be (n, 3, {config.resolution}, {config.resolution}), got {images.shape}")
        if len(images) == 0:
            raise ValueError("dataset is empty")
        self.config = config
        self.images = images
        self.state = state or TrainState.initialize(config)
        self.mask = make_center_mask(config.resolution, config.resolution, config.hole_size, config.hole_size)
        self.box = hole_box(self.mask)
        self.last_critic_losses: dict[str, float] = {}

    @property
    def weights(self):
        return self.config.weights

    def _batch(self, rng: np.random.Generator) -> np.ndarray:
        n, b = len(self.images), self.config.batch_size
        return self.images[rng.choice(n, b, replace=n < b)]

    def _local(self, x):
        return self.state.critics.local_critic(crop(x, self.box))

    # -- the two paths ------------------------------------------------------------
    def reconstruction_path(self, gt: np.ndarray, eps: np.ndarray) -> tuple[Tensor, dict[str, Tensor]]:
        """Style extracted from the ground truth drives the completion; returns (I_cr, losses)."""
        st = self.state
        posterior = st.extractor(gt)
        z_r = reparameterize(posterior, eps)
        _, i_cr = complete(st.generator, gt, self.mask, z_r)
        return i_cr, {
            "cons_e": consistency_loss(i_cr, Tensor(gt), self.config.consistency_reduction, self.config.l1_scale),
            "kl_e": kl_divergence(posterior.mu, posterior.logvar),
        }

    def generative_path(self, raw: np.ndarray, z: np.ndarray) -> tuple[Tensor, dict[str, Tensor]]:
        """Prior noise drives the completion and must be recoverable from it; returns (I_cf, losses).

        The latent consistency term updates G only: it reads z_f through a
        detached view of the extractor, so its gradient reaches I_cf but not E.
        """
        st = self.state
        _, i_cf = complete(st.generator, raw, self.mask, z)
        posterior = st.extractor(i_cf)
        z_f = st.extractor.detached()(i_cf).mu
        return i_cf, {
            "latent_cons": latent_consistency_loss(z_f, Tensor(z), self.config.consistency_reduction),
            "cons_g": consistency_loss(i_cf, Tensor(raw), self.config.consistency_reduction, self.config.l1_scale),
            "kl_g": kl_divergence(posterior.mu, posterior.logvar),
            "adv_global": generator_adv_loss(st.critics.global_critic, i_cf),
            "adv_local": generator_adv_loss(self._local, i_cf),
            "z_f": z_f,
        }

    def critic_step(self, real: np.ndarray, fake: np.ndarray, rng: np.random.Generator) -> dict[str, float]:
        """One Adam step on both critics; ``fake`` must already be detached."""
        critics = self.state.critics
        lam = self.weights.gp_lambda
        u_global = rng.random(len(real))
        u_local = rng.random(len(real))
        loss_g = critic_loss(critics.global_critic, real, fake, u_global, None, lam)
        loss_l = critic_loss(self._local, real, fake, u_local, self.mask, lam)
        for net in critics.networks().values():
            net.zero_grad()
        (loss_g + loss_l).backward()
        for name, net in critics.networks().items():
            adam_step(net.params, self.state.optimizers[name])
            net.zero_grad()
        return {"critic_global": loss_g.item(), "critic_local": loss_l.item()}

    # -- one iteration ----------------------------------------------------------
    def step(self, hook: Hook | None = None) -> LossReport:
        cfg, st = self.config, self.state
        rng = np.random.default_rng([cfg.seed, 1, st.iteration])
        b, j = cfg.batch_size, cfg.latent_dim

        for _ in range(cfg.n_critic):
            real = self._batch(rng)
            with no_grad():
                _, fake = complete(st.generator, real, self.mask, sample_prior(b, j, rng))
            self.last_critic_losses = self.critic_step(real, fake.data, rng)

        gt = self._batch(rng)
        raw = self._batch(rng)
        eps = sample_prior(b, j, rng)
        z = sample_prior(b, j, rng)

        trained = (st.extractor, st.generator)
        frozen = tuple(st.critics.networks().values())
        for net in frozen:
            net.set_requires_grad(False)
        try:
            i_cr, rec = self.reconstruction_path(gt, eps)
            i_cf, gen = self.generative_path(raw, z)
            parts = {**rec, **gen}
            for name in ("kl_e", "kl_g", "cons_e", "cons_g", "latent_cons", "adv_global", "adv_local"):
                value = parts[name].item()
                if not math.isfinite(value):
                    raise NonFiniteError(f"iteration {st.iteration}: loss term {name} is not finite ({value})")
            objective = total_objective(parts, self.weights) + self.weights.alpha_c * parts["latent_cons"]
            for net in trained:
                net.zero_grad()
            objective.backward()
        finally:
            for net in frozen:
                net.set_requires_grad(True)
        adam_step(st.extractor.params, st.optimizers["extractor"])
        adam_step(st.generator.params, st.optimizers["generator"])
        for net in trained:
            net.zero_grad()

        report = LossReport.from_parts({k: v.item() for k, v in parts.items() if k != "z_f"}, self.weights)
        st.iteration += 1
        if hook is not None:
            hook(st.iteration, {
                "mask": self.mask,
                "I_gt": gt,
                "I_cr": i_cr.data,
                "I_raw": raw,
                "I_cf": i_cf.data,
                "critic_real": real,
                "critic_fake": fake.data,
                "report": report,
            })
        return report

    def train(
        self,
        iterations: int | None = None,
        csv_path=None,
        checkpoint_dir=None,
        hook: Hook | None = None,
    ) -> list[LossReport]:
        """Run until ``iterations`` total steps (default: config) have been taken."""
        cfg, st = self.config, self.state
        target = cfg.iterations if iterations is None else iterations
        reports = []
        csv_file = None
        if csv_path is not None:
            csv_path = Path(csv_path)
            fresh = st.iteration == 0 or not csv_path.exists()
            csv_file = open(csv_path, "w" if fresh else "a")
            if fresh:
                csv_file.write(LossReport.CSV_HEADER + "\n")
        try:
            while st.iteration < target:
                report = self.step(hook)
                reports.append(report)
                if st.iteration % cfg.log_interval == 0:
                    if csv_file is not None:
                        csv_file.write(report.csv_row(st.iteration) + "\n")
                        csv_file.flush()
                    log.info("iter %d total %.4f cons_e %.4f", st.iteration, report.total, report.cons_e)
                if checkpoint_dir is not None and cfg.checkpoint_interval and st.iteration % cfg.checkpoint_interval == 0:
                    Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                    st.save(Path(checkpoint_dir) / f"ckpt_{st.iteration:06d}.piig")
        finally:
            if csv_file is not None:
                csv_file.close()
        return reports


def train(config: TrainConfig, images: np.ndarray, **kwargs) -> tuple[TrainState, list[LossReport]]:
    if len(images) == 0:
        raise ValueError("dataset is empty")
    trainer = Trainer(config, images)
    reports = trainer.train(**kwargs)
    return trainer.state, reports
