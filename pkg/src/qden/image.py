"""2-D grayscale images with explicit intensity-scale metadata."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RAW_SCALE = "raw_0_255"
NORMALIZED_SCALE = "normalized_0_1"
_SCALES = (RAW_SCALE, NORMALIZED_SCALE)


@dataclass
class GrayImage:
    """Grayscale image: float64 pixel array plus its intensity scale."""

    pixels: np.ndarray
    scale: str = RAW_SCALE

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 1:
            raise ValueError(f"pixels must be a 2-D array, got shape {self.pixels.shape}")
        if self.scale not in _SCALES:
            raise ValueError(f"unknown scale {self.scale!r}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_normalized(self) -> "GrayImage":
        if self.scale == NORMALIZED_SCALE:
            return GrayImage(self.pixels.copy(), NORMALIZED_SCALE)
        return GrayImage(self.pixels / 255.0, NORMALIZED_SCALE)

    def to_raw(self) -> "GrayImage":
        if self.scale == RAW_SCALE:
            return GrayImage(self.pixels.copy(), RAW_SCALE)
        return GrayImage(self.pixels * 255.0, RAW_SCALE)
