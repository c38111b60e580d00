"""Lightweight U-shape network for real-time underwater image enhancement,
built on a small numpy autodiff engine."""

__version__ = "0.1.0"

from .autograd import Tensor, backward, no_grad
from .checkpoint import load_weights, save_weights
from .estimator import LU2NetEnhancer
from .losses import LossConfig, LossReport, total_loss
from .metrics import psnr, ssim_metric, uciqe
from .network import Network, NetworkConfig, count_flops, count_params, init_params
from .train import TrainConfig, lr_at, train

__all__ = [
    "Tensor", "backward", "no_grad", "load_weights", "save_weights", "LU2NetEnhancer",
    "LossConfig", "LossReport", "total_loss", "psnr", "ssim_metric", "uciqe", "Network",
    "NetworkConfig", "count_flops", "count_params", "init_params", "TrainConfig", "lr_at", "train",
]
