"""qden: adaptive grayscale denoising with masked-convolution polynomial maps."""

from .autodiff import Tensor, backward, conv2d_masked, finite_diff_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .denoiser import apply_polynomial_map, denoise, flip_augment
from .image import GrayImage
from .kernels import backend_name
from .losses import (
    NoiseSpec,
    augmented_estimated_loss,
    estimated_loss,
    l2sp_penalty,
    mse,
    sure_gaussian,
)
from .masks import canonical_masks, receptive_field_extent
from .metrics import psnr, ssim
from .network import (
    CoefficientMaps,
    NetworkConfig,
    NetworkParams,
    active_parameter_count,
    build_network,
    forward,
    resnet_module,
)
from .noise import corrupt, make_rng, sample_blind_sigma
from .pgm import read_pgm, write_pgm
from .training import (
    AdamState,
    FineTuneConfig,
    TrainConfig,
    adam_step,
    fine_tune,
    sample_patches,
    supervised_train,
)

__version__ = "0.1.0"
