"""Composite training objective: RGB, LAB and LCh mean squared errors,
SSIM loss, and an optional perceptual (feature-network) term.

All terms have unit weight by default and are summed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .color import ColorTensor, srgb_to_lab, lab_to_lch, wrapped_hue_difference
from .exceptions import ConfigError, ShapeError
from .ops import ConvSpec, activation, conv2d

TERMS = ("rgb", "lab", "lch", "ssim", "vgg")


@dataclass
class LossConfig:
    use_rgb: bool = True
    use_lab: bool = True
    use_lch: bool = True
    use_ssim: bool = True
    use_vgg: bool = False
    weights: dict = field(default_factory=lambda: {t: 1.0 for t in TERMS})
    lab_scale: tuple[float, float, float] = (1 / 100, 1 / 128, 1 / 128)
    lch_scale: tuple[float, float, float] = (1 / 100, 1 / 128, 1 / math.pi)
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    data_range: float = 1.0
    vgg_weights: str | None = None
    vgg_taps: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ConfigError(f"SSIM window must be odd, got {self.ssim_window}")
        if self.ssim_sigma <= 0:
            raise ConfigError(f"SSIM sigma must be positive, got {self.ssim_sigma}")
        self.weights = {**{t: 1.0 for t in TERMS}, **self.weights}

    def enabled(self, term: str) -> bool:
        return getattr(self, f"use_{term}")


@dataclass
class LossReport:
    """Per-term values (already weighted) and their sum."""

    l_rgb: float | None
    l_lab: float | None
    l_lch: float | None
    l_ssim: float | None
    l_vgg: float | None
    total: float
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def terms(self) -> dict[str, float]:
        return {t: getattr(self, f"l_{t}") for t in TERMS if getattr(self, f"l_{t}") is not None}


def _check_pair(pred: Tensor, target: Tensor):
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ in shape")


def mse_rgb(pred: Tensor, target: Tensor) -> Tensor:
    _check_pair(pred, target)
    return ag.square(pred - target).mean()


def _channel_mse(diff: Tensor, scale) -> Tensor:
    """Sum over the three channels of the scaled per-channel mean squared error."""
    s = Tensor(np.asarray(scale, dtype=diff.dtype)[None, :, None, None])
    return ag.square(diff * s).mean(axis=(0, 2, 3)).sum()


def mse_lab(pred: Tensor, target: Tensor, cfg: LossConfig | None = None) -> Tensor:
    cfg = cfg or LossConfig()
    _check_pair(pred, target)
    lp = srgb_to_lab(ColorTensor(pred, "srgb01")).tensor
    lt = srgb_to_lab(ColorTensor(target, "srgb01")).tensor
    return _channel_mse(lp - lt, cfg.lab_scale)


def mse_lch(pred: Tensor, target: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """LCh error with the hue channel measured circularly."""
    cfg = cfg or LossConfig()
    _check_pair(pred, target)
    cp = lab_to_lch(srgb_to_lab(ColorTensor(pred, "srgb01"))).tensor
    ct = lab_to_lch(srgb_to_lab(ColorTensor(target, "srgb01"))).tensor
    lc = cp[:, 0:2] - ct[:, 0:2]
    dh = wrapped_hue_difference(cp[:, 2:3], ct[:, 2:3])
    return _channel_mse(lc, cfg.lch_scale[:2]) + _channel_mse(dh, cfg.lch_scale[2:])


@lru_cache(maxsize=16)
def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _gaussian_filter(x: Tensor, size: int, sigma: float) -> Tensor:
    """Separable valid-mode gaussian filtering of every channel."""
    n, c, h, w = x.shape
    g = gaussian_window(size, sigma).astype(x.dtype)
    flat = x.reshape(n * c, 1, h, w)
    gh = Tensor(g.reshape(1, 1, 1, size))
    gv = Tensor(g.reshape(1, 1, size, 1))
    y = conv2d(flat, gh, None, ConvSpec(1, 1, 1, size, has_bias=False))
    y = conv2d(y, gv, None, ConvSpec(1, 1, size, 1, has_bias=False))
    return y.reshape(n, c, h - size + 1, w - size + 1)


def ssim_index(x: Tensor, y: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """Mean windowed SSIM over all windows and channels (gaussian window,
    valid positions only)."""
    cfg = cfg or LossConfig()
    _check_pair(x, y)
    size = cfg.ssim_window
    if x.ndim != 4 or min(x.shape[2], x.shape[3]) < size:
        raise ConfigError(f"image of shape {x.shape} is smaller than the {size}x{size} SSIM window")
    c1 = (cfg.ssim_k1 * cfg.data_range) ** 2
    c2 = (cfg.ssim_k2 * cfg.data_range) ** 2

    def blur(t):
        return _gaussian_filter(t, size, cfg.ssim_sigma)

    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = blur(x * x) - mu_xx
    var_y = blur(y * y) - mu_yy
    cov = blur(x * y) - mu_xy
    num = (2.0 * mu_xy + c1) * (2.0 * cov + c2)
    den = (mu_xx + mu_yy + c1) * (var_x + var_y + c2)
    return (num / den).mean()


def ssim_loss(pred: Tensor, target: Tensor, cfg: LossConfig | None = None) -> Tensor:
    return 1.0 - ssim_index(pred, target, cfg)


class FeatureExtractor:
    """A frozen stack of 3x3 conv + ReLU layers.

    Tap 0 is the input itself; tap ``i`` is the output of layer ``i``.
    Weights come from a checkpoint holding ``layers.{i}.weight`` and
    ``layers.{i}.bias``.
    """

    def __init__(self, layers: Sequence[tuple[np.ndarray, np.ndarray]], taps: Sequence[int] | None = None):
        self.layers = [(np.asarray(w), np.asarray(b)) for w, b in layers]
        self.taps = tuple(taps) if taps is not None else (len(self.layers),)
        for t in self.taps:
            if not 0 <= t <= len(self.layers):
                raise ConfigError(f"tap {t} out of range for {len(self.layers)} layers")

    @classmethod
    def identity(cls) -> "FeatureExtractor":
        return cls([], taps=(0,))

    @classmethod
    def load(cls, path, taps: Sequence[int] | None = None) -> "FeatureExtractor":
        from .checkpoint import load_tensors

        tensors = load_tensors(path)
        layers = []
        while f"layers.{len(layers)}.weight" in tensors:
            i = len(layers)
            layers.append((tensors[f"layers.{i}.weight"], tensors[f"layers.{i}.bias"]))
        return cls(layers, taps)

    def features(self, x: Tensor) -> list[Tensor]:
        feats = [x]
        for w, b in self.layers:
            spec = ConvSpec.for_weights(w, padding=w.shape[2] // 2)
            x = activation(conv2d(x, Tensor(w.astype(x.dtype)), Tensor(b.astype(x.dtype)), spec), "relu")
            feats.append(x)
        return [feats[t] for t in self.taps]


def perceptual_loss(pred: Tensor, target: Tensor, extractor: FeatureExtractor | None) -> Tensor:
    """Sum over taps of the mean squared feature difference."""
    if extractor is None:
        raise ConfigError("the perceptual term is enabled but no feature extractor is loaded; "
                          "set vgg_weights in the [loss] config section (or --vgg-weights) "
                          "to an LU2N checkpoint holding layers.{i}.weight/bias tensors")
    _check_pair(pred, target)
    total = None
    for fp, ft in zip(extractor.features(pred), extractor.features(target)):
        term = ag.square(fp - ft).mean()
        total = term if total is None else total + term
    return total


def total_loss(pred: Tensor, target: Tensor, cfg: LossConfig | None = None,
               extractor: FeatureExtractor | None = None) -> LossReport:
    """Weighted sum of enabled terms. ``pred`` and ``target`` are in the
    network range [-1, 1] and are mapped to [0, 1] first."""
    cfg = cfg or LossConfig()
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=pred.dtype))
    _check_pair(pred, target)
    if cfg.use_vgg and extractor is None and cfg.vgg_weights:
        extractor = FeatureExtractor.load(cfg.vgg_weights, cfg.vgg_taps)
    p = (pred + 1.0) * 0.5
    t = (target + 1.0) * 0.5
    fns = {
        "rgb": lambda: mse_rgb(p, t),
        "lab": lambda: mse_lab(p, t, cfg),
        "lch": lambda: mse_lch(p, t, cfg),
        "ssim": lambda: ssim_loss(p, t, cfg),
        "vgg": lambda: perceptual_loss(p, t, extractor),
    }
    values: dict[str, float | None] = {}
    total = None
    for term in TERMS:
        if not cfg.enabled(term):
            values[term] = None
            continue
        v = fns[term]() * float(cfg.weights[term])
        values[term] = float(v.data)
        total = v if total is None else total + v
    if total is None:
        raise ConfigError("every loss term is disabled")
    return LossReport(*(values[t] for t in TERMS), total=float(total.data), tensor=total)
