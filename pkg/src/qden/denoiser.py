"""End-to-end denoising: polynomial pixel mapping plus flip-averaged inference."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from .autodiff import Tensor, add, as_tensor, mul, square
from .image import GrayImage
from .network import CoefficientMaps, NetworkParams, forward

FLIP_LABELS = ("identity", "h", "v", "hv")


def apply_polynomial_map(z, coeffs: CoefficientMaps, degree: int) -> Tensor:
    """Pixelwise reconstruction: xhat_i = sum_m a_m[i] * z_i^m, unclipped."""
    if degree not in (1, 2):
        raise ValueError(f"degree must be 1 or 2, got {degree}")
    if degree == 2 and coeffs.a2 is None:
        raise ValueError("degree 2 requested but coefficient map a2 is missing")
    z = as_tensor(z)
    if coeffs.a0.shape != z.shape:
        raise ValueError(f"coefficient shape {coeffs.a0.shape} != image shape {z.shape}")
    out = add(coeffs.a0, mul(coeffs.a1, z))
    if degree == 2:
        out = add(out, mul(coeffs.a2, square(z)))
    return out


def flip_array(arr: np.ndarray, label: str) -> np.ndarray:
    """Apply one of the four flips; each is its own inverse."""
    if label == "identity":
        return arr.copy()
    if label == "h":
        return np.ascontiguousarray(arr[:, ::-1])
    if label == "v":
        return np.ascontiguousarray(arr[::-1, :])
    if label == "hv":
        return np.ascontiguousarray(arr[::-1, ::-1])
    raise ValueError(f"unknown flip label {label!r}")


@dataclass
class FlipVariant:
    label: str
    image: GrayImage
    inverse: Callable[[np.ndarray], np.ndarray]


def flip_augment(z: GrayImage) -> List[FlipVariant]:
    """The 4-member augmentation set: identity, H-flip, V-flip, HV-flip."""
    variants = []
    for label in FLIP_LABELS:
        flipped = GrayImage(flip_array(z.pixels, label), z.scale)
        variants.append(FlipVariant(
            label=label, image=flipped,
            inverse=lambda a, lab=label: flip_array(a, lab),
        ))
    return variants


def _paired_average(by_label: dict) -> np.ndarray:
    # the {identity,hv} + {h,v} pairing commutes with every flip bit-exactly,
    # which makes flip-averaged denoising exactly flip-equivariant
    return ((by_label["identity"] + by_label["hv"])
            + (by_label["h"] + by_label["v"])) * 0.25


def denoise(params: NetworkParams, z: GrayImage, mode: str = "plain") -> GrayImage:
    """Denoise one image; output is raw-scale, clipped to [0, 255] exactly once.

    ``plain`` runs a single forward pass; ``flip_averaged`` denoises all
    four flip variants, un-flips each result and averages before clipping.
    """
    if mode not in ("plain", "flip_averaged"):
        raise ValueError(f"mode must be 'plain' or 'flip_averaged', got {mode!r}")
    zn = z.to_normalized().pixels
    degree = params.config.degree
    if mode == "plain":
        coeffs = forward(params, zn)
        xhat = apply_polynomial_map(zn, coeffs, degree).data
    else:
        by_label = {}
        for label in FLIP_LABELS:
            flipped = flip_array(zn, label)
            coeffs = forward(params, flipped)
            rec = apply_polynomial_map(flipped, coeffs, degree).data
            by_label[label] = flip_array(rec, label)
        xhat = _paired_average(by_label)
    return GrayImage(np.clip(xhat * 255.0, 0.0, 255.0))
