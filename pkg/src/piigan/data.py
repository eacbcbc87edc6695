"""Masks, synthetic scenes and P6 image files.

Images live in two forms: uint8 arrays (C, H, W) on disk and float32 arrays
normalized to [-1, 1] via ``v / 127.5 - 1`` for the networks.
"""
from __future__ import annotations

import csv
import os
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

WHITE = 1.0


class ImageFormatError(ValueError):
    pass


# -- masks -------------------------------------------------------------------

@dataclass(frozen=True)
class MaskSpec:
    image_h: int
    image_w: int
    hole_h: int
    hole_w: int
    kind: str = "center"

    def __post_init__(self):
        if self.kind != "center":
            raise ValueError(f"unsupported mask kind {self.kind!r}")
        if not (0 < self.hole_h <= self.image_h and 0 < self.hole_w <= self.image_w):
            raise ValueError(f"hole {self.hole_h}x{self.hole_w} does not fit image {self.image_h}x{self.image_w}")

    @property
    def box(self) -> tuple[int, int, int, int]:
        top = (self.image_h - self.hole_h) // 2
        left = (self.image_w - self.hole_w) // 2
        return top, top + self.hole_h, left, left + self.hole_w

    def tensor(self) -> np.ndarray:
        return make_center_mask(self.image_h, self.image_w, self.hole_h, self.hole_w)


def make_center_mask(image_h: int, image_w: int, hole_h: int, hole_w: int) -> np.ndarray:
    """(1, 1, H, W) float32 mask: 0 inside the centered hole, 1 elsewhere.

    Odd margins put the extra row/column below and to the right of the hole.
    """
    if hole_h > image_h or hole_w > image_w or hole_h < 0 or hole_w < 0:
        raise ValueError(f"hole {hole_h}x{hole_w} exceeds image {image_h}x{image_w}")
    mask = np.ones((1, 1, image_h, image_w), np.float32)
    top = (image_h - hole_h) // 2
    left = (image_w - hole_w) // 2
    mask[..., top : top + hole_h, left : left + hole_w] = 0.0
    return mask


def apply_mask(image: np.ndarray, mask: np.ndarray, fill: float = WHITE) -> np.ndarray:
    """Hole pixels set to ``fill`` (white), known pixels untouched."""
    image = np.asarray(image)
    mask = np.asarray(mask)
    try:
        shape = np.broadcast_shapes(image.shape, mask.shape)
    except ValueError:
        shape = None
    if shape != image.shape:
        raise ValueError(f"mask {mask.shape} does not fit image {image.shape}")
    return np.where(mask == 1, image, np.asarray(fill, dtype=image.dtype)).astype(image.dtype, copy=False)


# -- normalization -----------------------------------------------------------

def normalize(pixels: np.ndarray) -> np.ndarray:
    return (np.asarray(pixels, np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def denormalize(image: np.ndarray) -> np.ndarray:
    x = (np.asarray(image, np.float64) + 1.0) * 127.5
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


# -- P6 portable pixmaps -------------------------------------------------------

def write_image(path, pixels: np.ndarray) -> None:
    """Write a uint8 (3, H, W) array as binary P6."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ValueError(f"expected uint8 (3, H, W) pixels, got {pixels.dtype} {pixels.shape}")
    _, h, w = pixels.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(pixels.transpose(1, 2, 0)).tobytes())


def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("malformed P6 header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise ImageFormatError("malformed P6 header")
    return tokens, pos + 1


def read_image(path) -> np.ndarray:
    """Read a binary P6 file into a uint8 (3, H, W) array."""
    buf = Path(path).read_bytes()
    tokens, offset = _header_tokens(buf, 4)
    if tokens[0] != b"P6":
        raise ImageFormatError(f"{path}: not a binary P6 file")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"{path}: malformed P6 header") from None
    if w < 1 or h < 1:
        raise ImageFormatError(f"{path}: bad dimensions {w}x{h}")
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported max value {maxval}")
    payload = buf[offset:]
    if len(payload) < w * h * 3:
        raise ImageFormatError(f"{path}: truncated payload ({len(payload)} of {w * h * 3} bytes)")
    pixels = np.frombuffer(payload[: w * h * 3], np.uint8).reshape(h, w, 3)
    return np.ascontiguousarray(pixels.transpose(2, 0, 1))


def load_image_dir(directory) -> np.ndarray:
    """All ``*.ppm`` files in a directory, sorted by name, as a uint8 (n, 3, H, W) stack."""
    paths = sorted(Path(directory).glob("*.ppm"))
    if not paths:
        raise FileNotFoundError(f"no .ppm images in {directory}")
    images = [read_image(p) for p in paths]
    if len({im.shape for im in images}) != 1:
        raise ImageFormatError(f"images in {directory} have differing sizes")
    return np.stack(images)


# -- synthetic scenes ----------------------------------------------------------

# uniform ranges for every continuous attribute; positions/sizes are fractions of the side
ATTRIBUTE_RANGES = {
    "cx": (0.35, 0.65),
    "cy": (0.35, 0.65),
    "theta": (0.0, np.pi),
    "size": (0.10, 0.25),
    "bg": (0.05, 0.55),
    "accent": (0.45, 1.0),
}


@dataclass(frozen=True)
class SyntheticScene:
    """A background colour plus one disc or bar; the hole usually hides its key attributes."""

    kind: int  # 0 = disc, 1 = bar
    cx: float
    cy: float
    theta: float
    size: float
    bg_r: float
    bg_g: float
    bg_b: float
    accent_r: float
    accent_g: float
    accent_b: float

    def render(self, resolution: int = 32) -> np.ndarray:
        """uint8 (3, R, R) image; a pure function of the attributes."""
        n = resolution
        coords = (np.arange(n, dtype=np.float64) + 0.5) / n
        yy, xx = np.meshgrid(coords, coords, indexing="ij")
        dx, dy = xx - self.cx, yy - self.cy
        if self.kind == 0:
            dist = np.sqrt(dx * dx + dy * dy) - self.size
        else:
            along = dx * np.cos(self.theta) + dy * np.sin(self.theta)
            across = -dx * np.sin(self.theta) + dy * np.cos(self.theta)
            # half-thickness 0.05, half-length size + 0.25
            dist = np.maximum(np.abs(across) - 0.05, np.abs(along) - (self.size + 0.25))
        coverage = np.clip(0.5 - dist * n, 0.0, 1.0)
        bg = np.array([self.bg_r, self.bg_g, self.bg_b])[:, None, None]
        accent = np.array([self.accent_r, self.accent_g, self.accent_b])[:, None, None]
        img = bg * (1.0 - coverage) + accent * coverage
        return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def sample_scenes(n: int, seed=0) -> list[SyntheticScene]:
    if n < 1:
        raise ValueError("need at least one scene")
    rng = np.random.default_rng(seed)

    def uni(key, size):
        lo, hi = ATTRIBUTE_RANGES[key]
        return rng.uniform(lo, hi, size)

    kind = rng.integers(0, 2, n)
    cx, cy, theta, size = uni("cx", n), uni("cy", n), uni("theta", n), uni("size", n)
    bg, accent = uni("bg", (n, 3)), uni("accent", (n, 3))
    return [
        SyntheticScene(int(kind[i]), float(cx[i]), float(cy[i]), float(theta[i]), float(size[i]),
                       *map(float, bg[i]), *map(float, accent[i]))
        for i in range(n)
    ]


def generate_synthetic_dataset(n: int, resolution: int = 32, seed=0) -> tuple[np.ndarray, list[SyntheticScene]]:
    """Deterministic (uint8 images (n, 3, R, R), attribute records)."""
    scenes = sample_scenes(n, seed)
    images = np.stack([s.render(resolution) for s in scenes])
    return images, scenes


def write_attributes(path, scenes: list[SyntheticScene]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index"] + [fl.name for fl in fields(SyntheticScene)])
        for i, s in enumerate(scenes):
            writer.writerow([i] + [repr(v) for v in astuple(s)])


def read_attributes(path) -> list[SyntheticScene]:
    scenes = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            scenes.append(SyntheticScene(
                int(row["kind"]), *(float(row[fl.name]) for fl in fields(SyntheticScene)[1:])
            ))
    return scenes


def write_dataset(directory, images: np.ndarray, scenes: list[SyntheticScene] | None = None) -> list[Path]:
    directory = Path(directory)
    os.makedirs(directory, exist_ok=True)
    width = max(5, len(str(len(images) - 1)))
    paths = []
    for i, img in enumerate(images):
        p = directory / f"{i:0{width}d}.ppm"
        write_image(p, img)
        paths.append(p)
    if scenes is not None:
        write_attributes(directory / "attributes.csv", scenes)
    return paths
