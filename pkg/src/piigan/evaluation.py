"""Completion quality metrics and the paired-sample diversity protocol."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from .engine import Tensor, no_grad
from .nets import hole_box

FeatureFn = Callable[[np.ndarray], np.ndarray]

SSIM_WINDOW = 8


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a.data if isinstance(a, Tensor) else a, np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def to_unit(image) -> np.ndarray:
    """Map the [-1, 1] training range to [0, 1]."""
    return (np.asarray(image, np.float64) + 1.0) / 2.0


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; ``inf`` when the images are identical."""
    if not peak > 0:
        raise ValueError(f"peak must be positive, got {peak}")
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gray(x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        return x
    if x.ndim == 3:
        return x.mean(axis=0)
    raise ValueError(f"ssim expects (H, W) or (C, H, W) images, got shape {x.shape}")


def ssim(a, b, peak: float = 1.0, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over non-overlapping ``window`` x ``window`` blocks of the channel-mean image.

    Rows and columns that do not fill a whole block are dropped.
    """
    a, b = _pair(a, b)
    a, b = _gray(a), _gray(b)
    h, w = a.shape
    if h < window or w < window:
        raise ValueError(f"image {a.shape} is smaller than the {window}x{window} window")
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    nh, nw = h // window, w // window

    def blocks(x):
        x = x[: nh * window, : nw * window].reshape(nh, window, nw, window)
        return x.transpose(0, 2, 1, 3).reshape(nh, nw, -1)

    xa, xb = blocks(a), blocks(b)
    mu_a, mu_b = xa.mean(-1), xb.mean(-1)
    da, db = xa - mu_a[..., None], xb - mu_b[..., None]
    var_a, var_b = (da * da).mean(-1), (db * db).mean(-1)
    cov = (da * db).mean(-1)
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def l1_percent(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b))) * 100.0


def l2_percent(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2)) * 100.0


@dataclass
class MetricReport:
    """Means over images in [0, 1]. Identical pairs count toward ``psnr_capped`` and are left out of ``psnr_db``."""

    l1_percent: float
    l2_percent: float
    psnr_db: float
    ssim: float
    n_images: int
    psnr_capped: int = 0


@dataclass
class DiversityReport:
    global_score: float
    local_score: float
    n_pairs: int


def metric_report(predictions, targets) -> MetricReport:
    """Per-image metrics averaged over a batch of (N, C, H, W) images in [0, 1]."""
    p, t = _pair(predictions, targets)
    if p.ndim != 4 or len(p) == 0:
        raise ValueError(f"expected a non-empty (N, C, H, W) batch, got {p.shape}")
    psnrs = [psnr(x, y) for x, y in zip(p, t)]
    finite = [v for v in psnrs if math.isfinite(v)]
    return MetricReport(
        l1_percent=float(np.mean([l1_percent(x, y) for x, y in zip(p, t)])),
        l2_percent=float(np.mean([l2_percent(x, y) for x, y in zip(p, t)])),
        psnr_db=float(np.mean(finite)) if finite else math.inf,
        ssim=float(np.mean([ssim(x, y) for x, y in zip(p, t)])),
        n_images=len(p),
        psnr_capped=len(psnrs) - len(finite),
    )


def best_of_k(samples, target) -> tuple[int, float]:
    """Index and PSNR of the sample closest to ``target`` by PSNR."""
    scores = [psnr(s, target) for s in np.asarray(samples)]
    i = int(np.argmax(scores))
    return i, scores[i]


# -- diversity ------------------------------------------------------------------

def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cos(u, v) in float64; exactly 0 for equal vectors."""
    u, v = np.asarray(u, np.float64).ravel(), np.asarray(v, np.float64).ravel()
    if np.array_equal(u, v):
        return 0.0
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 1.0
    return float(max(0.0, 1.0 - np.dot(u, v) / (nu * nv)))


def l1_distance(u: np.ndarray, v: np.ndarray) -> float:
    u, v = np.asarray(u, np.float64).ravel(), np.asarray(v, np.float64).ravel()
    return float(np.mean(np.abs(u - v)))


DISTANCES = {"cosine": cosine_distance, "l1": l1_distance}


def sample_pairs(k: int, n_pairs: int, seed=0) -> list[tuple[int, int]]:
    """Distinct index pairs i < j, all of them if ``n_pairs`` covers every pair, else a seeded subset."""
    if k < 2:
        raise ValueError(f"need at least 2 samples, got {k}")
    every = list(itertools.combinations(range(k), 2))
    if n_pairs >= len(every):
        return every
    rng = np.random.default_rng(seed)
    return [every[i] for i in np.sort(rng.choice(len(every), n_pairs, replace=False))]


def crop_array(images: np.ndarray, box) -> np.ndarray:
    r0, r1, c0, c1 = box
    return images[..., r0:r1, c0:c1]


def _mean_distance(features: np.ndarray, pairs, distance) -> float:
    return float(np.mean([distance(features[i], features[j]) for i, j in pairs]))


def diversity(
    samples,
    mask,
    feature_fn: FeatureFn,
    n_pairs: int = 1000,
    seed=0,
    distance: str = "cosine",
) -> DiversityReport:
    """Mean pairwise feature distance over K completions of one input, on full frames and on the hole crop."""
    samples = np.asarray(samples.data if isinstance(samples, Tensor) else samples)
    if samples.ndim != 4:
        raise ValueError(f"samples must be (K, C, H, W), got {samples.shape}")
    if distance not in DISTANCES:
        raise ValueError(f"unknown distance {distance!r}; choose from {sorted(DISTANCES)}")
    pairs = sample_pairs(len(samples), n_pairs, seed)
    dist = DISTANCES[distance]
    full = np.asarray(feature_fn(samples)).reshape(len(samples), -1)
    local = np.asarray(feature_fn(crop_array(samples, hole_box(mask)))).reshape(len(samples), -1)
    return DiversityReport(_mean_distance(full, pairs, dist), _mean_distance(local, pairs, dist), len(pairs))


def pairwise_l1_spread(samples, mask) -> float:
    """Mean L1 over all sample pairs restricted to the hole, in the samples' own units."""
    samples = np.asarray(samples, np.float64)
    hole = crop_array(samples, hole_box(mask))
    pairs = sample_pairs(len(samples), len(samples) ** 2)
    return float(np.mean([np.mean(np.abs(hole[i] - hole[j])) for i, j in pairs]))


def extractor_features(extractor) -> FeatureFn:
    """Penultimate extractor activations as a numpy feature map, used as the perceptual proxy."""

    def fn(images: np.ndarray) -> np.ndarray:
        with no_grad():
            return extractor.features(Tensor(np.asarray(images, np.float32))).data

    return fn


# -- reporting ------------------------------------------------------------------

def write_report_csv(path, report) -> None:
    names = [f.name for f in fields(report)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        writer.writerow([getattr(report, n) for n in names])


def format_table(report) -> str:
    rows = asdict(report)
    width = max(len(k) for k in rows)
    lines = []
    for k, v in rows.items():
        text = f"{v:.4f}" if isinstance(v, float) else str(v)
        lines.append(f"{k:<{width}}  {text}")
    return "\n".join(lines)


def completions(generator, image: np.ndarray, mask: np.ndarray, zs: np.ndarray) -> np.ndarray:
    """Composited completions of one (C, H, W) image, one per row of ``zs``."""
    from .trainer import complete

    batch = np.repeat(np.asarray(image, np.float32)[None], len(zs), axis=0)
    with no_grad():
        _, out = complete(generator, batch, mask, np.asarray(zs, np.float32))
    return out.data


def evaluate_model(state, images: np.ndarray, mask: np.ndarray, k: int = 20, n_pairs: int = 1000, seed=0):
    """Best-of-``k`` quality metrics and mean diversity over ``images`` in the [-1, 1] range."""
    from .latent import sample_prior

    rng = np.random.default_rng(seed)
    feature_fn = extractor_features(state.extractor)
    best, scores = [], []
    for image in np.asarray(images, np.float32):
        samples = completions(state.generator, image, mask, sample_prior(k, state.config.latent_dim, rng))
        i, _ = best_of_k(to_unit(samples), to_unit(image))
        best.append(samples[i])
        scores.append(diversity(samples, mask, feature_fn, n_pairs, rng))
    metrics = metric_report(to_unit(np.stack(best)), to_unit(images))
    div = DiversityReport(
        float(np.mean([s.global_score for s in scores])),
        float(np.mean([s.local_score for s in scores])),
        int(sum(s.n_pairs for s in scores)),
    )
    return metrics, div
