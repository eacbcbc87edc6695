"""Training configuration and its ``key = value`` text format."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .losses import LossWeights


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 12
    iterations: int = 2000
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    alpha_kl: float = 10.0
    alpha_c: float = 0.9
    alpha_adv: float = 1.0
    gp_lambda: float = 10.0
    consistency_reduction: str = "sample"
    l1_reference_resolution: int = 128
    n_critic: int = 1
    seed: int = 0
    resolution: int = 32
    hole_size: int = 16
    latent_dim: int = 64
    dataset_size: int = 2000
    checkpoint_interval: int = 0
    log_interval: int = 1
    data_dir: str = ""
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    @property
    def l1_scale(self) -> float:
        """Image L1 norms are expressed at ``l1_reference_resolution`` (0 keeps the native size)."""
        if self.consistency_reduction != "sample" or not self.l1_reference_resolution:
            return 1.0
        return (self.l1_reference_resolution / self.resolution) ** 2

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha_kl, self.alpha_c, self.alpha_adv, self.gp_lambda)

    def validate(self) -> None:
        positive = ("batch_size", "resolution", "hole_size", "latent_dim", "dataset_size", "log_interval")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("iterations", "checkpoint_interval", "seed", "l1_reference_resolution"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.consistency_reduction not in ("sample", "mean"):
            raise ConfigError("consistency_reduction must be 'sample' or 'mean'")
        if not 1 <= self.n_critic <= 5:
            raise ConfigError("n_critic must be between 1 and 5")
        if self.resolution % 8:
            raise ConfigError("resolution must be divisible by 8")
        if self.hole_size % 8 or self.hole_size > self.resolution:
            raise ConfigError("hole_size must be a multiple of 8 no larger than resolution")
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("need lr > 0 and betas in [0, 1)")
        try:
            self.weights
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def dumps(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n".replace("'", "") for f in fields(self))


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _convert(name: str, raw: str):
    kind = _TYPES[name]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> TrainConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'name = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value {raw!r} for {key} ({_TYPES[key]})") from None
    try:
        return TrainConfig(**values)
    except ConfigError as e:
        raise ConfigError(f"{source}: {e}") from None


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), str(path))
