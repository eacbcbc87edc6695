"""Pluralistic image completion: a style-noise extractor, a noise-conditioned
generator and global/local Wasserstein critics, on a small numpy autodiff engine."""

__version__ = "0.1.0"
