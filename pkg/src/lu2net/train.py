"""Adam optimizer, step-decay schedule and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .autograd import Tensor, backward, no_grad
from .checkpoint import load_tensors, save_weights
from .data import batches, chw_to_image, denormalize, prefetch
from .exceptions import ConfigError, TrainingHalted
from .losses import FeatureExtractor, LossConfig, total_loss
from .metrics import psnr, ssim_metric
from .network import Network

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 150
    lr0: float = 0.0005
    lr_decay: float = 0.8
    decay_every: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    checkpoint_every: int = 0
    seed: int = 0
    grad_clip: float | None = None
    max_steps: int | None = None
    prefetch: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.batch_size < 1 or self.epochs < 0 or self.decay_every < 1:
            raise ConfigError("batch_size and decay_every must be >= 1 and epochs >= 0")


def lr_at(epoch: int, cfg: TrainConfig | None = None) -> float:
    """Learning rate for a 0-based epoch: lr0 * decay^(epoch // decay_every).

    The product is formed in decimal from the configured literals, so e.g.
    0.0005 * 0.8^2 is exactly the float nearest 0.00032.
    """
    cfg = cfg or TrainConfig()
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    k = epoch // cfg.decay_every
    return float(Decimal(repr(cfg.lr0)) * Decimal(repr(cfg.lr_decay)) ** k)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": a for k, a in self.m.items()}
        out.update({f"adam.v.{k}": a for k, a in self.v.items()})
        out["adam.t"] = np.array([self.t], dtype=np.float32)
        return out

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray]) -> "AdamState":
        state = cls(t=int(tensors["adam.t"][0]) if "adam.t" in tensors else 0)
        for key, arr in tensors.items():
            if key.startswith("adam.m."):
                state.m[key[len("adam.m."):]] = arr.copy()
            elif key.startswith("adam.v."):
                state.v[key[len("adam.v."):]] = arr.copy()
        return state


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Raises :class:`TrainingHalted` before touching anything if a gradient is
    not finite.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    for name in params:
        g = grads[name]
        if g.shape != params[name].shape:
            raise ConfigError(f"gradient for {name} has shape {g.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingHalted(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
    return state


@dataclass
class EpochLog:
    epoch: int
    lr: float
    l_rgb: float
    l_lab: float
    l_lch: float
    l_ssim: float
    total: float
    test_psnr: float = float("nan")
    test_ssim: float = float("nan")


LOG_FIELDS = ("epoch", "lr", "l_rgb", "l_lab", "l_lch", "l_ssim", "total", "test_psnr", "test_ssim")


def write_epoch_csv(log: list[EpochLog], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
        for row in log:
            d = asdict(row)
            writer.writerow([d["epoch"], repr(d["lr"])] + [f"{d[k]:.8g}" for k in LOG_FIELDS[2:]])


@dataclass
class TrainResult:
    net: Network
    log: list[EpochLog]
    step_losses: list[float]
    state: AdamState
    last_checkpoint: Path | None = None


def evaluate_split(net: Network, split, batch_size: int = 8) -> tuple[float, float]:
    """Mean PSNR / SSIM of network outputs against references."""
    scores = []
    for batch in batches(split, batch_size, shuffle=False):
        out = net.predict(batch.inputs.astype(net.dtype))
        for pred, gt in zip(out, batch.targets):
            p = chw_to_image(denormalize(pred.astype(np.float64)))
            g = chw_to_image(denormalize(gt.astype(np.float64)))
            scores.append((psnr(p, g), ssim_metric(p, g)))
    if not scores:
        return float("nan"), float("nan")
    arr = np.array(scores)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


def epoch_seed(seed: int, epoch: int) -> int:
    return seed * 1_000_003 + epoch


def _clip_gradients(grads: dict[str, np.ndarray], max_norm: float):
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale


def training_state_tensors(net: Network, state: AdamState, epoch: int) -> dict[str, np.ndarray]:
    tensors = state.to_tensors()
    tensors["train.epoch"] = np.array([epoch], dtype=np.float32)
    return tensors


def train(net: Network, train_split, cfg: TrainConfig | None = None, *,
          loss_cfg: LossConfig | None = None, test_split=None, out_dir=None,
          resume_from=None, extractor: FeatureExtractor | None = None,
          on_step: Callable[[int, float], None] | None = None) -> TrainResult:
    """Run the epoch loop, mutating ``net`` in place.

    ``out_dir`` receives ``epoch_log.csv``, periodic ``epoch_XXXX.lu2n``
    checkpoints (every ``checkpoint_every`` epochs) and ``final.lu2n``.
    ``resume_from`` restores parameters, Adam moments and the epoch counter
    from a checkpoint written by an earlier run.
    """
    cfg = cfg or TrainConfig()
    loss_cfg = loss_cfg or LossConfig()
    if len(train_split) == 0:
        raise ConfigError("training split is empty")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    state = AdamState()
    start_epoch = 0
    if resume_from is not None:
        tensors = load_tensors(resume_from)
        for name, p in net.params.items():
            p.data = tensors[name].astype(p.dtype)
        state = AdamState.from_tensors(tensors)
        start_epoch = int(tensors["train.epoch"][0]) + 1

    log: list[EpochLog] = []
    step_losses: list[float] = []
    last_ckpt = None
    params = net.params
    steps = 0
    for epoch in range(start_epoch, cfg.epochs):
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break
        lr = lr_at(epoch, cfg)
        sums = np.zeros(5)
        count = 0
        stream = batches(train_split, cfg.batch_size, epoch_seed(cfg.seed, epoch))
        if cfg.prefetch:
            stream = prefetch(stream, cfg.prefetch)
        for batch in stream:
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
            x = Tensor(batch.inputs.astype(net.dtype))
            pred = net(x)
            report = total_loss(pred, batch.targets.astype(net.dtype), loss_cfg, extractor)
            if not math.isfinite(report.total):
                raise TrainingHalted(f"non-finite loss at epoch {epoch}, step {steps}; "
                                     f"last good checkpoint: {last_ckpt}")
            g = backward(report.tensor)
            grads = {name: g[p] for name, p in params.items()}
            if cfg.grad_clip:
                _clip_gradients(grads, cfg.grad_clip)
            adam_step(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            steps += 1
            step_losses.append(report.total)
            if on_step:
                on_step(steps, report.total)
            n = len(batch.ids)
            sums += n * np.array([report.l_rgb or 0.0, report.l_lab or 0.0, report.l_lch or 0.0,
                                  report.l_ssim or 0.0, report.total])
            count += n
        if count == 0:
            break
        means = sums / count
        test_psnr = test_ssim = float("nan")
        if test_split is not None and len(test_split):
            with no_grad():
                test_psnr, test_ssim = evaluate_split(net, test_split, cfg.batch_size)
        entry = EpochLog(epoch, lr, *map(float, means), test_psnr, test_ssim)
        log.append(entry)
        logger.info("epoch %d lr %.6g loss %.5f test psnr %.3f", epoch, lr, entry.total, test_psnr)
        if out_dir is not None:
            write_epoch_csv(log, out_dir / "epoch_log.csv")
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                last_ckpt = out_dir / f"epoch_{epoch:04d}.lu2n"
                save_weights(net, last_ckpt, training_state_tensors(net, state, epoch))

    if out_dir is not None:
        final_epoch = log[-1].epoch if log else start_epoch - 1
        last_ckpt = out_dir / "final.lu2n"
        save_weights(net, last_ckpt, training_state_tensors(net, state, final_epoch))
        write_epoch_csv(log, out_dir / "epoch_log.csv")
    return TrainResult(net, log, step_losses, state, last_ckpt)
