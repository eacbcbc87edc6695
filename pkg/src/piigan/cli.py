"""Command-line entry point: train, sample, eval, gradcheck, make-data."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError, TrainConfig, load_config
from .data import (
    ImageFormatError,
    denormalize,
    generate_synthetic_dataset,
    load_image_dir,
    make_center_mask,
    normalize,
    read_image,
    write_dataset,
    write_image,
)
from .engine import NonFiniteError

log = logging.getLogger("piigan")


def _dataset(config: TrainConfig) -> np.ndarray:
    if config.data_dir:
        pixels = load_image_dir(config.data_dir)
    else:
        pixels, _ = generate_synthetic_dataset(config.dataset_size, config.resolution, config.seed)
    return normalize(pixels)


def cmd_train(args) -> int:
    from .trainer import Trainer, TrainState

    config = load_config(args.config)
    out = Path(args.out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = TrainState.load(args.resume) if args.resume else None
    if state is not None:
        config = state.config
    trainer = Trainer(config, _dataset(config), state)
    trainer.train(csv_path=out / "losses.csv", checkpoint_dir=out / "checkpoints")
    trainer.state.save(out / "final.piig")
    print(f"trained to iteration {trainer.state.iteration}; outputs in {out}")
    return 0


def _grid(images: list[np.ndarray], gap: int = 2) -> np.ndarray:
    """One row of (3, H, W) uint8 images separated by white gaps."""
    c, h, w = images[0].shape
    grid = np.full((c, h, len(images) * (w + gap) - gap), 255, np.uint8)
    for i, img in enumerate(images):
        grid[:, :, i * (w + gap) : i * (w + gap) + w] = img
    return grid


def cmd_sample(args) -> int:
    from .evaluation import completions
    from .latent import sample_prior
    from .trainer import TrainState

    if args.k < 1:
        raise ValueError("--k must be at least 1")
    state = TrainState.load(args.checkpoint)
    cfg = state.config
    pixels = read_image(args.input)
    if pixels.shape[1:] != (cfg.resolution, cfg.resolution):
        raise ImageFormatError(f"{args.input}: expected {cfg.resolution}x{cfg.resolution}, got {pixels.shape[2]}x{pixels.shape[1]}")
    mask = make_center_mask(cfg.resolution, cfg.resolution, cfg.hole_size, cfg.hole_size)
    zs = sample_prior(args.k, cfg.latent_dim, args.seed)
    samples = denormalize(completions(state.generator, normalize(pixels), mask, zs))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    for i, img in enumerate(samples):
        write_image(out / f"{stem}_sample_{i:03d}.ppm", img)
    write_image(out / f"{stem}_grid.ppm", _grid(list(samples)))
    print(f"wrote {len(samples)} completions and 1 grid to {out}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate_model, format_table, write_report_csv
    from .trainer import TrainState

    state = TrainState.load(args.checkpoint)
    cfg = state.config
    if args.data_dir:
        images = normalize(load_image_dir(args.data_dir))
    else:
        pixels, _ = generate_synthetic_dataset(args.n_inputs, cfg.resolution, args.seed + 1)
        images = normalize(pixels)
    images = images[: args.n_inputs]
    mask = make_center_mask(cfg.resolution, cfg.resolution, cfg.hole_size, cfg.hole_size)
    metrics, div = evaluate_model(state, images, mask, args.k, args.pairs, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(out / "metrics.csv", metrics)
    write_report_csv(out / "diversity.csv", div)
    print(f"best of {args.k} samples by PSNR")
    print(format_table(metrics))
    print(format_table(div))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    results = run_gradcheck(args.seed, args.trials)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradcheck failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def cmd_make_data(args) -> int:
    pixels, scenes = generate_synthetic_dataset(args.n, args.resolution, args.seed)
    paths = write_dataset(args.out_dir, pixels, scenes)
    print(f"wrote {len(paths)} images to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="piigan", description="Pluralistic image completion with style-noise extraction.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a key = value config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", help="overrides out_dir from the config")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="write K completions of one image plus a grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="P6 image at the training resolution")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="samples")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="quality metrics and diversity scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", help="directory of P6 images; synthetic held-out scenes if omitted")
    p.add_argument("--n-inputs", type=int, default=50)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("make-data", help="write a synthetic dataset directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (CheckpointError, ImageFormatError, NonFiniteError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
