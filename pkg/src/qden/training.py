"""Supervised training on clean/noisy patch pairs and per-image fine-tuning.

Supervised training minimizes the MSE between the clean patch and the
polynomial reconstruction, with fresh noise drawn every time a patch is
used. Fine-tuning starts from the supervised weights and minimizes the
flip-averaged estimated loss plus an anchor penalty that pulls the
weights back toward their supervised starting point; it never reads the
clean image (which is accepted for logging only).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor, add, backward, scalar_mul
from .denoiser import _paired_average, apply_polynomial_map, denoise
from .image import GrayImage
from .losses import NoiseSpec, estimated_loss, l2sp_penalty, mse, variant_losses
from .metrics import psnr
from .network import NetworkConfig, NetworkParams, build_network, forward
from .noise import Rng, make_rng, sample_blind_sigma, sample_noise

# fine-tuning schedule validated per noise level: sigma -> (lambda, epochs)
FINETUNE_SCHEDULE = {
    15.0: (1e-4, 25),
    25.0: (3e-4, 20),
    30.0: (5e-4, 16),
    50.0: (2e-3, 13),
    75.0: (5e-3, 10),
}


def recommended_finetune(sigma: float) -> Tuple[float, int]:
    """(lambda, epochs) for the schedule entry nearest to ``sigma``."""
    key = min(FINETUNE_SCHEDULE, key=lambda s: abs(s - sigma))
    return FINETUNE_SCHEDULE[key]


@dataclass
class TrainConfig:
    """Supervised-training hyperparameters (desk-scale defaults)."""

    patch_size: int = 40
    patches_total: int = 400
    batch_size: int = 8
    epochs: int = 30
    lr: float = 1e-3
    blind: bool = False
    sigma: float = 25.0
    sigma_range: Tuple[float, float] = (0.0, 55.0)
    val_sigma: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.patch_size < 1 or self.batch_size < 1 or self.patches_total < 1:
            raise ValueError("patch_size, batch_size and patches_total must be >= 1")

    @property
    def effective_val_sigma(self) -> float:
        if self.val_sigma is not None:
            return self.val_sigma
        if self.blind:
            return 0.5 * (self.sigma_range[0] + self.sigma_range[1])
        return self.sigma


@dataclass
class FineTuneConfig:
    """Per-image adaptive fine-tuning hyperparameters."""

    sigma: float
    lam: float = 3e-4
    epochs: int = 20
    lr: float = 3e-4
    use_augmentation: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")


@dataclass
class AdamState:
    """First/second moment estimates per parameter plus the step counter."""

    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    val_psnr: float


@dataclass
class FineTuneMetrics:
    epoch: int
    est_loss: float
    mse: Optional[float] = None


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite; carries the last good params."""

    def __init__(self, message: str, last_good: Optional[NetworkParams] = None):
        super().__init__(message)
        self.last_good = last_good


def init_adam(params: NetworkParams, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    zeros = lambda t: np.zeros_like(t.data)
    return AdamState(
        m={name: zeros(t) for name, t in params.items()},
        v={name: zeros(t) for name, t in params.items()},
        beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(params: NetworkParams, grads: Dict[str, np.ndarray],
              state: AdamState, lr: float) -> Tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update, in place on the parameter data."""
    state.step += 1
    t = state.step
    for name, tensor in params.items():
        g = grads[name]
        if g is None:
            g = np.zeros_like(tensor.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != tensor.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape "
                             f"{tensor.data.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {name!r} at step {t}")
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / (1.0 - state.beta1 ** t)
        v_hat = state.v[name] / (1.0 - state.beta2 ** t)
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def sample_patches(images: Sequence[GrayImage], cfg: TrainConfig,
                   rng: Rng) -> List[np.ndarray]:
    """cfg.patches_total clean patches at uniform positions, raw 0-255 scale."""
    if not images:
        raise ValueError("no training images supplied")
    arrays = [img.to_raw().pixels for img in images]
    p = cfg.patch_size
    for arr in arrays:
        if arr.shape[0] < p or arr.shape[1] < p:
            raise ValueError(
                f"image of shape {arr.shape} is smaller than patch size {p}"
            )
    patches = []
    for _ in range(cfg.patches_total):
        idx = int(rng.integers(len(arrays)))
        arr = arrays[idx]
        r = int(rng.integers(arr.shape[0] - p + 1))
        c = int(rng.integers(arr.shape[1] - p + 1))
        patches.append(arr[r:r + p, c:c + p].copy())
    return patches


def _lr_for_epoch(base_lr: float, epoch: int, total_epochs: int) -> float:
    # halve at each third of the run
    stage = min(2, (3 * (epoch - 1)) // max(total_epochs, 1))
    return base_lr * (0.5 ** stage)


def _grad_map(params: NetworkParams) -> Dict[str, np.ndarray]:
    return {name: t.grad for name, t in params.items()}


def supervised_train(train_images: Sequence[GrayImage],
                     val_images: Sequence[GrayImage],
                     netcfg: NetworkConfig,
                     cfg: TrainConfig) -> Tuple[NetworkParams, List[EpochMetrics]]:
    """Minimize patch MSE with Adam; returns the best-validation checkpoint.

    Noise is redrawn for every patch use; with ``cfg.blind`` the noise
    level itself is redrawn uniformly from ``cfg.sigma_range`` per patch.
    """
    params = build_network(netcfg, seed=cfg.seed)
    if cfg.epochs == 0:
        return params, []

    patch_rng = make_rng(cfg.seed, stream=1)
    noise_rng = make_rng(cfg.seed, stream=2)
    order_rng = make_rng(cfg.seed, stream=3)
    val_rng = make_rng(cfg.seed, stream=4)

    patches = sample_patches(train_images, cfg, patch_rng)
    val_spec = NoiseSpec(cfg.effective_val_sigma, "gaussian")
    val_pairs = [(img.to_raw(), corrupt_raw(img, val_spec, val_rng)) for img in val_images]

    state = init_adam(params)
    best_params: Optional[NetworkParams] = None
    best_psnr = -np.inf
    metrics: List[EpochMetrics] = []

    for epoch in range(1, cfg.epochs + 1):
        lr = _lr_for_epoch(cfg.lr, epoch, cfg.epochs)
        order = order_rng.permutation(len(patches))
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            terms = []
            for pi in batch:
                clean = patches[pi]
                sigma = (sample_blind_sigma(noise_rng, *cfg.sigma_range)
                         if cfg.blind else cfg.sigma)
                z = clean + sample_noise(clean.shape, NoiseSpec(sigma, "gaussian"),
                                         noise_rng)
                zn, xn = z / 255.0, clean / 255.0
                coeffs = forward(params, zn)
                xhat = apply_polynomial_map(zn, coeffs, netcfg.degree)
                terms.append(mse(Tensor(xn), xhat))
            loss = terms[0]
            for term in terms[1:]:
                loss = add(loss, term)
            loss = scalar_mul(loss, 1.0 / len(terms))
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise TrainingDiverged(
                    f"training loss became non-finite at epoch {epoch}",
                    last_good=best_params if best_params is not None else params,
                )
            params.zero_grads()
            backward(loss)
            adam_step(params, _grad_map(params), state, lr)
            epoch_loss += loss_value
            n_batches += 1

        if val_pairs:
            val_psnr = float(np.mean([
                psnr(clean, denoise(params, noisy, mode="plain"))
                for clean, noisy in val_pairs
            ]))
        else:
            val_psnr = float("nan")
        metrics.append(EpochMetrics(epoch, epoch_loss / n_batches, val_psnr))
        if not val_pairs or val_psnr > best_psnr:
            best_psnr = val_psnr
            best_params = params.clone()

    return best_params if best_params is not None else params, metrics


def corrupt_raw(img: GrayImage, spec: NoiseSpec, rng: Rng) -> GrayImage:
    """Raw-scale corruption helper shared by training and validation."""
    raw = img.to_raw()
    return GrayImage(raw.pixels + sample_noise(raw.pixels.shape, spec, rng))


def fine_tune(w_sup: NetworkParams, z: GrayImage, cfg: FineTuneConfig,
              clean: Optional[GrayImage] = None
              ) -> Tuple[NetworkParams, List[FineTuneMetrics]]:
    """Adapt the supervised weights to one noisy image.

    Each epoch takes one Adam step on the (optionally flip-averaged)
    estimated loss plus the anchor penalty cfg.lam * ||w - w_sup||^2.
    The optimization never reads ``clean``; when supplied it only feeds
    the per-epoch MSE column of the metrics (raw-scale, clipped,
    flip-averaged reconstruction against the clean image).
    """
    if cfg.sigma <= 0:
        raise ValueError(f"fine-tuning needs a positive sigma, got {cfg.sigma}")
    w = w_sup.clone(requires_grad=True)
    anchor = w_sup.clone(requires_grad=False)
    if cfg.epochs == 0:
        return w, []

    zn = z.to_normalized().pixels
    sigma2 = (cfg.sigma / 255.0) ** 2
    clean_raw = clean.to_raw().pixels if clean is not None else None
    state = init_adam(w)
    metrics: List[FineTuneMetrics] = []

    for epoch in range(1, cfg.epochs + 1):
        if cfg.use_augmentation:
            losses, recons = variant_losses(zn, w, sigma2)
            est = scalar_mul(add(add(losses[0], losses[1]),
                                 add(losses[2], losses[3])), 0.25)
            recon = _paired_average({k: t.data for k, t in recons.items()})
        else:
            coeffs = forward(w, zn)
            est = estimated_loss(zn, coeffs, sigma2, w.config.degree)
            recon = apply_polynomial_map(zn, coeffs, w.config.degree).data
        total = add(est, l2sp_penalty(w, anchor, cfg.lam))

        est_value = est.item()
        if not np.isfinite(est_value):
            raise TrainingDiverged(
                f"estimated loss became non-finite at fine-tune epoch {epoch}",
                last_good=w,
            )
        w.zero_grads()
        backward(total)
        adam_step(w, _grad_map(w), state, cfg.lr)

        mse_value = None
        if clean_raw is not None:
            rec_raw = np.clip(recon * 255.0, 0.0, 255.0)
            mse_value = float(np.mean((clean_raw - rec_raw) ** 2))
        metrics.append(FineTuneMetrics(epoch, est_value, mse_value))

    return w, metrics


def write_supervised_csv(path, metrics: List[EpochMetrics]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("epoch,loss,val_psnr\n")
        for row in metrics:
            fh.write(f"{row.epoch},{row.loss!r},{row.val_psnr!r}\n")


def write_finetune_csv(path, metrics: List[FineTuneMetrics]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("epoch,est_loss,mse\n")
        for row in metrics:
            mse_field = "" if row.mse is None else repr(row.mse)
            fh.write(f"{row.epoch},{row.est_loss!r},{mse_field}\n")
