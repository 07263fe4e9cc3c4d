"""Procedural grayscale textures for desk-scale experiments and demos."""

from __future__ import annotations

from typing import List

import numpy as np
from scipy import ndimage

from .image import GrayImage
from .noise import Rng


def _grating(size: int, rng: Rng) -> np.ndarray:
    freq = rng.uniform(0.04, 0.25)
    angle = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    amp = rng.uniform(40.0, 90.0)
    offset = rng.uniform(100.0, 155.0)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    wave = np.sin(2.0 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy)
                  + phase)
    return offset + amp * wave


def _checker(size: int, rng: Rng) -> np.ndarray:
    period = int(rng.integers(4, 13))
    lo = rng.uniform(30.0, 100.0)
    hi = rng.uniform(150.0, 225.0)
    r0 = int(rng.integers(period))
    c0 = int(rng.integers(period))
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    cells = ((yy + r0) // period + (xx + c0) // period) % 2
    return np.where(cells == 0, lo, hi).astype(np.float64)


def _blobs(size: int, rng: Rng) -> np.ndarray:
    field = rng.normal(size=(size, size))
    field = ndimage.gaussian_filter(field, sigma=rng.uniform(2.0, 5.0))
    lo, hi = field.min(), field.max()
    span = hi - lo if hi > lo else 1.0
    return 30.0 + 195.0 * (field - lo) / span

def _mixed(size: int, rng: Rng) -> np.ndarray:
    return 0.5 * (_grating(size, rng) + _blobs(size, rng))


_KINDS = (_grating, _checker, _blobs, _mixed)


def texture_bank(count: int, size: int, rng: Rng) -> List[GrayImage]:
    """``count`` clean synthetic textures of shape [size, size], raw scale."""
    images = []
    for i in range(count):
        make = _KINDS[i % len(_KINDS)]
        images.append(GrayImage(np.clip(make(size, rng), 0.0, 255.0)))
    return images
