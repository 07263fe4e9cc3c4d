"""Training and fine-tuning objectives.

``estimated_loss`` is the noisy-image-only surrogate for the MSE of a
pixelwise polynomial denoiser: a quadratic penalty on the residual to
the noisy image plus a variance-based correction term that makes the
estimate unbiased for any zero-mean symmetric additive white noise.
``sure_gaussian`` is the classical closed form for Gaussian noise and
agrees with it algebraically for degrees 1 and 2; it is kept as an
independent numpy-only cross-check and is never used for optimization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .autodiff import Tensor, add, as_tensor, mul, reduce_mean, reduce_sum, scalar_mul, square, sub
from .denoiser import FLIP_LABELS, apply_polynomial_map, flip_array
from .network import CoefficientMaps, NetworkParams, forward

_DISTRIBUTIONS = ("gaussian", "laplacian", "uniform_symmetric")


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean symmetric i.i.d. additive noise: std in 0-255 units."""

    sigma: float
    distribution: str = "gaussian"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.distribution not in _DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")

    @property
    def variance(self) -> float:
        return float(self.sigma) ** 2


def mse(x, xhat) -> Tensor:
    """Mean squared error (1/n) * ||x - xhat||^2."""
    x, xhat = as_tensor(x), as_tensor(xhat)
    if x.shape != xhat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {xhat.shape}")
    return reduce_mean(square(sub(x, xhat)))


def _check_coeffs(z: Tensor, coeffs: CoefficientMaps, sigma2: float, degree: int) -> None:
    if sigma2 < 0:
        raise ValueError(f"sigma2 must be >= 0, got {sigma2}")
    if degree not in (1, 2):
        raise ValueError(f"degree must be 1 or 2, got {degree}")
    if coeffs.a0.shape != z.shape:
        raise ValueError(f"coefficients {coeffs.a0.shape} do not match image {z.shape}")
    if degree == 1 and coeffs.a2 is not None and np.any(coeffs.a2.data != 0.0):
        raise ValueError("degree 1 but a nonzero a2 map was supplied")
    if degree == 2 and coeffs.a2 is None:
        raise ValueError("degree 2 but the a2 map is missing")


def estimated_loss(z, coeffs: CoefficientMaps, sigma2: float, degree: int) -> Tensor:
    """Unbiased estimate of the denoising MSE, from the noisy image alone.

    (1/n)||z - xhat||^2 + (sigma2/n) * sum_i [2 a1_i + 4 a2_i z_i - 1],
    with the a2 term present only for degree 2. Differentiable w.r.t.
    the coefficient maps (and anything that produced them).
    """
    z = as_tensor(z)
    _check_coeffs(z, coeffs, sigma2, degree)
    xhat = apply_polynomial_map(z, coeffs, degree)
    residual = reduce_mean(square(sub(z, xhat)))
    bracket = scalar_mul(coeffs.a1, 2.0)
    if degree == 2:
        bracket = add(bracket, scalar_mul(mul(coeffs.a2, z), 4.0))
    bracket = bracket - 1.0
    return add(residual, scalar_mul(reduce_mean(bracket), float(sigma2)))


def sure_gaussian(z, coeffs: CoefficientMaps, sigma2: float, degree: int) -> float:
    """Closed-form Gaussian-noise risk estimate; numpy-only cross-check.

    -sigma2 + (1/n)||z - xhat||^2 + (2 sigma2 / n) * sum_i (a1_i + 2 a2_i z_i),
    treating the coefficients as constants w.r.t. z_i.
    """
    z = as_tensor(z)
    _check_coeffs(z, coeffs, sigma2, degree)
    zd = z.data
    a0, a1 = coeffs.a0.data, coeffs.a1.data
    a2 = coeffs.a2.data if coeffs.a2 is not None else None
    xhat = a0 + a1 * zd
    divergence = a1.copy()
    if degree == 2 and a2 is not None:
        xhat = xhat + a2 * zd * zd
        divergence = divergence + 2.0 * a2 * zd
    sigma2 = float(sigma2)
    return float(-sigma2 + np.mean((zd - xhat) ** 2) + 2.0 * sigma2 * np.mean(divergence))


def variant_losses(z: np.ndarray, params: NetworkParams, sigma2: float
                   ) -> Tuple[List[Tensor], dict]:
    """Estimated loss per flip variant, plus each un-flipped reconstruction.

    Returns (losses in FLIP_LABELS order, {label: reconstruction Tensor
    in the original orientation}).
    """
    z = np.asarray(z, dtype=np.float64)
    losses, recons = [], {}
    for label in FLIP_LABELS:
        flipped = flip_array(z, label)
        coeffs = forward(params, flipped)
        losses.append(estimated_loss(flipped, coeffs, sigma2, params.config.degree))
        rec = apply_polynomial_map(flipped, coeffs, params.config.degree)
        recons[label] = Tensor(flip_array(rec.data, label))
    return losses, recons


def augmented_estimated_loss(z, params: NetworkParams, sigma2: float) -> Tensor:
    """Mean of the estimated losses over the 4-member flip set of z."""
    z = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    losses, _ = variant_losses(z, params, sigma2)
    total = add(add(losses[0], losses[1]), add(losses[2], losses[3]))
    return scalar_mul(total, 0.25)


def l2sp_penalty(params: NetworkParams, anchor: NetworkParams, lam: float) -> Tensor:
    """lam * sum over parameters of ||w - w_anchor||^2."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if set(params.names()) != set(anchor.names()):
        raise ValueError("parameter name sets differ between params and anchor")
    total: Optional[Tensor] = None
    for name, tensor in params.items():
        ref = anchor[name]
        if tensor.shape != ref.shape:
            raise ValueError(f"shape mismatch for {name}: {tensor.shape} vs {ref.shape}")
        term = reduce_sum(square(sub(tensor, Tensor(ref.data))))
        total = term if total is None else add(total, term)
    return scalar_mul(total, float(lam))
