"""Synthetic additive noise for training augmentation and evaluation.

Noisy values are never clipped: the unbiasedness of the estimated loss
relies on purely additive noise, and clipping would break the moment
identities it is built on.
"""

from __future__ import annotations

import numpy as np

from .image import NORMALIZED_SCALE, GrayImage
from .losses import NoiseSpec

Rng = np.random.Generator


def make_rng(seed: int, stream: int = 0) -> Rng:
    """Seeded PCG64 generator; (seed, stream) pairs give independent streams."""
    return np.random.Generator(np.random.PCG64([int(seed), int(stream)]))


def sample_noise(shape, spec: NoiseSpec, rng: Rng) -> np.ndarray:
    """Zero-mean i.i.d. noise field with std spec.sigma, in raw 0-255 units."""
    sigma = float(spec.sigma)
    if spec.distribution == "gaussian":
        return rng.normal(0.0, 1.0, size=shape) * sigma
    if spec.distribution == "laplacian":
        # scale b = sigma / sqrt(2) so the variance is sigma^2
        return rng.laplace(0.0, 1.0, size=shape) * (sigma / np.sqrt(2.0))
    if spec.distribution == "uniform_symmetric":
        return rng.uniform(-1.0, 1.0, size=shape) * (sigma * np.sqrt(3.0))
    raise ValueError(f"unknown noise distribution {spec.distribution!r}")


def corrupt(x: GrayImage, spec: NoiseSpec, rng: Rng) -> GrayImage:
    """Z = x + N with N i.i.d. per the spec; sigma is in 0-255 units."""
    noise = sample_noise(x.pixels.shape, spec, rng)
    if x.scale == NORMALIZED_SCALE:
        noise = noise / 255.0
    return GrayImage(x.pixels + noise, x.scale)


def sample_blind_sigma(rng: Rng, lo: float, hi: float) -> float:
    """Uniform noise-level draw from [lo, hi] for blind training."""
    lo, hi = float(lo), float(hi)
    if lo < 0 or lo > hi:
        raise ValueError(f"need 0 <= lo <= hi, got [{lo}, {hi}]")
    return float(rng.uniform(lo, hi))
