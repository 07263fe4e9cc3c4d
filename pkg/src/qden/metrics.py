"""PSNR and SSIM in the usual 8-bit reporting conventions."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .image import GrayImage

PSNR_CAP_DB = 100.0
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _raw_array(img) -> np.ndarray:
    if isinstance(img, GrayImage):
        return img.to_raw().pixels
    return np.asarray(img, dtype=np.float64)


def psnr(x, xhat, peak: float = 255.0) -> float:
    """10 * log10(peak^2 / mse), capped at 100 dB (identical images hit the cap)."""
    a, b = _raw_array(x), _raw_array(xhat)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    err = float(np.mean((a - b) ** 2))
    if err == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(peak * peak / err)))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(x, xhat) -> float:
    """Mean local SSIM: 11x11 Gaussian window (std 1.5), K1=0.01, K2=0.03, range 255.

    Local statistics are Gaussian-weighted and evaluated only where the
    window fits entirely inside the image.
    """
    a, b = _raw_array(x), _raw_array(xhat)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < _SSIM_WINDOW:
        raise ValueError(
            f"image {a.shape} smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window"
        )
    win = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    half = _SSIM_WINDOW // 2

    def local_mean(img):
        full = ndimage.correlate(img, win, mode="constant")
        return full[half:-half, half:-half]

    mu_a = local_mean(a)
    mu_b = local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b

    c1 = (_SSIM_K1 * 255.0) ** 2
    c2 = (_SSIM_K2 * 255.0) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
