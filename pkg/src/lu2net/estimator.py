"""scikit-learn compatible wrapper around the network and trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .autograd import no_grad
from .checkpoint import load_weights, save_weights
from .data import PairedDataset, denormalize, normalize
from .losses import LossConfig
from .metrics import psnr, ssim_metric
from .network import DEFAULT_WIDTHS, NetworkConfig, count_params, init_params
from .train import TrainConfig, train
from .validation import check_divisible, check_images, check_paired


class LU2NetEnhancer(TransformerMixin, BaseEstimator):
    """Underwater image enhancer with the fit/predict/transform protocol.

    ``X`` holds degraded images and ``y`` their references, both as
    ``n x H x W x 3`` arrays (uint8 or floats in [0, 1]). ``predict`` and
    ``transform`` return enhanced images in the same layout with float values.

    Parameters
    ----------
    stage_widths, axial_k, ca_reduction, activation, output_activation
        Network architecture; see :class:`lu2net.network.NetworkConfig`.
    epochs, learning_rate, lr_decay, decay_every, batch_size, max_steps
        Training schedule; see :class:`lu2net.train.TrainConfig`.
    use_lab, use_lch, use_ssim
        Toggle loss terms (the RGB term is always on).
    random_state
        Seeds weight initialization and batch shuffling.
    """

    def __init__(self, stage_widths=DEFAULT_WIDTHS, axial_k=7, ca_reduction=8,
                 activation="relu", output_activation="tanh", epochs=150,
                 learning_rate=0.0005, lr_decay=0.8, decay_every=40, batch_size=8,
                 max_steps=None, use_lab=True, use_lch=True, use_ssim=True,
                 random_state=0):
        self.stage_widths = stage_widths
        self.axial_k = axial_k
        self.ca_reduction = ca_reduction
        self.activation = activation
        self.output_activation = output_activation
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.use_lab = use_lab
        self.use_lch = use_lch
        self.use_ssim = use_ssim
        self.random_state = random_state

    def _network_config(self) -> NetworkConfig:
        return NetworkConfig(tuple(self.stage_widths), self.axial_k, self.ca_reduction,
                             self.activation, self.output_activation)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr0=self.learning_rate, lr_decay=self.lr_decay,
                           decay_every=self.decay_every, batch_size=self.batch_size,
                           max_steps=self.max_steps, seed=self.random_state)

    def _loss_config(self) -> LossConfig:
        return LossConfig(use_lab=self.use_lab, use_lch=self.use_lch, use_ssim=self.use_ssim)

    def fit(self, X, y):
        X, y = check_paired(X, y)
        cfg = self._network_config()
        check_divisible(X.shape[1], X.shape[2], cfg.depth)
        net = init_params(cfg, seed=self.random_state)
        ds = PairedDataset.from_arrays(X, y)
        result = train(net, ds.subset(range(len(ds))), self._train_config(),
                       loss_cfg=self._loss_config())
        self.network_ = result.net
        self.history_ = result.log
        self.step_losses_ = result.step_losses
        self.n_params_ = count_params(result.net)
        self.n_features_in_ = 3
        return self

    def predict(self, X, batch_size=None):
        check_is_fitted(self, "network_")
        X = check_images(X)
        check_divisible(X.shape[1], X.shape[2], self.network_.config.depth)
        bs = batch_size or self.batch_size
        out = []
        with no_grad():
            for start in range(0, len(X), bs):
                chunk = normalize(X[start:start + bs]).transpose(0, 3, 1, 2)
                pred = self.network_.predict(np.ascontiguousarray(chunk, dtype=self.network_.dtype))
                out.append(denormalize(pred).transpose(0, 2, 3, 1))
        return np.concatenate(out).astype(np.float32)

    def transform(self, X):
        return self.predict(X)

    def score(self, X, y):
        """Mean PSNR (dB) of the enhanced ``X`` against ``y``."""
        pred = self.predict(X)
        _, y = check_paired(X, y)
        return float(np.mean([psnr(p, t) for p, t in zip(pred, y)]))

    def ssim_score(self, X, y) -> float:
        pred = self.predict(X)
        _, y = check_paired(X, y)
        return float(np.mean([ssim_metric(p, t) for p, t in zip(pred, y)]))

    def save(self, path):
        check_is_fitted(self, "network_")
        save_weights(self.network_, path)

    @classmethod
    def from_checkpoint(cls, path, **params) -> "LU2NetEnhancer":
        """Build a fitted estimator from saved weights (architecture inferred)."""
        net = load_weights(path)
        cfg = net.config
        est = cls(stage_widths=cfg.stage_widths, axial_k=cfg.axial_k,
                  ca_reduction=cfg.ca_reduction, **params)
        net.config = est._network_config()
        est.network_ = net
        est.n_params_ = count_params(net)
        est.n_features_in_ = 3
        est.history_ = []
        return est
