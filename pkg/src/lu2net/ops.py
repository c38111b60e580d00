"""Differentiable operators used by the network: convolutions, pooling,
resampling, concatenation and activations.

All activations are ``N x C x H x W``. Convolution is cross-correlation with
zero padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autograd import Tensor, as_tensor, record
from .exceptions import ConfigError, ShapeError

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    has_bias: bool = True

    def __post_init__(self):
        if self.stride < 1 or self.padding < 0 or self.kernel_h < 1 or self.kernel_w < 1:
            raise ConfigError(f"invalid convolution spec {self}")

    @classmethod
    def for_weights(cls, weights, stride=1, padding=0, has_bias=True) -> "ConvSpec":
        cout, cin, kh, kw = np.shape(weights)
        return cls(cin, cout, kh, kw, stride, padding, has_bias)

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        ho = (height + 2 * self.padding - self.kernel_h) // self.stride + 1
        wo = (width + 2 * self.padding - self.kernel_w) // self.stride + 1
        if ho <= 0 or wo <= 0:
            raise ConfigError(
                f"{self} produces a non-positive output size for a {height}x{width} input")
        return ho, wo


def _require_4d(x: Tensor, what: str):
    if x.ndim != 4:
        raise ShapeError(f"{what} expects an N x C x H x W tensor, got shape {x.shape}")


def conv2d(x: Tensor, weights: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Direct 2-D cross-correlation, looping over kernel taps."""
    _require_4d(x, "conv2d")
    if weights.shape != (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w):
        raise ShapeError(f"weight shape {weights.shape} does not match {spec}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input shape {x.shape} has {x.shape[1]} channels, "
                         f"weights {weights.shape} expect {spec.in_channels}")
    if spec.has_bias != (bias is not None):
        raise ShapeError(f"bias presence does not match {spec}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"bias shape {bias.shape} does not match {spec.out_channels} outputs")

    n, _, h, w = x.shape
    ho, wo = spec.output_size(h, w)
    p, s = spec.padding, spec.stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    wd = weights.data

    def window(i, j):
        return (slice(None), slice(None),
                slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))

    out = np.zeros((n, spec.out_channels, ho, wo), dtype=x.dtype)
    for i in range(spec.kernel_h):
        for j in range(spec.kernel_w):
            patch = xp[window(i, j)]
            out += np.einsum("oc,nchw->nohw", wd[:, :, i, j], patch, optimize=True)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        for i in range(spec.kernel_h):
            for j in range(spec.kernel_w):
                sl = window(i, j)
                gw[:, :, i, j] = np.einsum("nohw,nchw->oc", g, xp[sl], optimize=True)
                gxp[sl] += np.einsum("oc,nohw->nchw", wd[:, :, i, j], g, optimize=True)
        gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weights) if bias is None else (x, weights, bias)
    return record("conv2d", out, inputs, vjp)


def axial_depthwise(x: Tensor, h_kernels: Tensor, v_kernels: Tensor) -> Tensor:
    """Per-channel horizontal 1xk plus vertical kx1 correlation plus the input.

    ``h_kernels`` and ``v_kernels`` are ``C x k``. Zero padding of ``(k-1)/2``
    keeps the spatial size so the residual addition lines up.
    """
    _require_4d(x, "axial_depthwise")
    c = x.shape[1]
    if h_kernels.ndim != 2 or v_kernels.ndim != 2 or h_kernels.shape != v_kernels.shape:
        raise ShapeError(f"axial kernels must both be C x k, got {h_kernels.shape} "
                         f"and {v_kernels.shape}")
    k = h_kernels.shape[1]
    if k % 2 == 0:
        raise ConfigError(f"axial kernel size must be odd, got {k}")
    if h_kernels.shape[0] != c:
        raise ShapeError(f"{h_kernels.shape[0]} kernel pairs for input shape {x.shape}")

    n, _, hh, ww = x.shape
    r = k // 2
    xd = x.data
    hk = h_kernels.data[None, :, None, :]
    vk = v_kernels.data[None, :, None, :]
    xw = np.pad(xd, ((0, 0), (0, 0), (0, 0), (r, r)))
    xh = np.pad(xd, ((0, 0), (0, 0), (r, r), (0, 0)))
    out = xd.copy()
    tmp = np.empty_like(xd)
    for j in range(k):
        np.multiply(xw[..., j:j + ww], hk[..., j:j + 1], out=tmp)
        out += tmp
        np.multiply(xh[:, :, j:j + hh, :], vk[..., j:j + 1], out=tmp)
        out += tmp

    def vjp(g):
        gh = np.empty_like(h_kernels.data)
        gv = np.empty_like(v_kernels.data)
        gxw = np.zeros_like(xw)
        gxh = np.zeros_like(xh)
        for j in range(k):
            gh[:, j] = np.einsum("nchw,nchw->c", g, xw[..., j:j + ww], optimize=True)
            gv[:, j] = np.einsum("nchw,nchw->c", g, xh[:, :, j:j + hh, :], optimize=True)
            gxw[..., j:j + ww] += g * hk[..., j:j + 1]
            gxh[:, :, j:j + hh, :] += g * vk[..., j:j + 1]
        gx = g + gxw[..., r:r + ww] + gxh[:, :, r:r + hh, :]
        return gx, gh, gv

    return record("axial_depthwise", out, (x, h_kernels, v_kernels), vjp)


def pointwise(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution: a per-pixel linear map across channels.

    ``weights`` is ``Cout x Cin``.
    """
    _require_4d(x, "pointwise")
    n, c, h, w = x.shape
    if weights.ndim != 2 or weights.shape[1] != c:
        raise ShapeError(f"pointwise weights {weights.shape} do not fit input shape {x.shape}")
    cout = weights.shape[0]
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match {cout} outputs")
    xf = x.data.reshape(n, c, h * w)
    out = np.matmul(weights.data, xf)
    if bias is not None:
        out += bias.data[:, None]

    def vjp(g):
        gf = g.reshape(n, cout, h * w)
        gw = np.matmul(gf, xf.transpose(0, 2, 1)).sum(axis=0)
        gx = np.matmul(weights.data.T, gf).reshape(x.shape)
        gb = gf.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weights) if bias is None else (x, weights, bias)
    return record("pointwise", out.reshape(n, cout, h, w), inputs, vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    _require_4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    if h * w < 1:
        raise ShapeError(f"cannot average over an empty spatial extent {x.shape}")
    out = x.data.mean(axis=(2, 3), keepdims=True)
    scale = 1.0 / (h * w)
    return record("global_avg_pool", out, (x,),
                  lambda g: (np.broadcast_to(g * scale, x.shape).astype(x.dtype),))


def downsample_max2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2. Ties route the gradient to the first maximum."""
    _require_4d(x, "downsample_max2")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"downsample_max2 needs even height and width, got {x.shape}")
    blocks = (x.data.reshape(n, c, h // 2, 2, w // 2, 2)
              .transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = (gb.reshape(n, c, h // 2, w // 2, 2, 2)
              .transpose(0, 1, 2, 4, 3, 5).reshape(x.shape))
        return (gx,)

    return record("downsample_max2", out, (x,), vjp)


@lru_cache(maxsize=64)
def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Corner-aligned linear interpolation weights, shape ``n_out x n_in``."""
    m = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    m.setflags(write=False)
    return m


def resample_bilinear(x: Tensor, height: int, width: int) -> Tensor:
    """Corner-aligned bilinear resampling of the last two axes."""
    _require_4d(x, "resample_bilinear")
    _, _, h, w = x.shape
    ah = interpolation_matrix(h, height).astype(x.dtype)
    aw = interpolation_matrix(w, width).astype(x.dtype)
    out = np.matmul(np.matmul(ah, x.data), aw.T)
    return record("resample_bilinear", out, (x,),
                  lambda g: (np.matmul(np.matmul(ah.T, g), aw),))


def upsample_bilinear2(x: Tensor) -> Tensor:
    _require_4d(x, "upsample_bilinear2")
    return resample_bilinear(x, 2 * x.shape[2], 2 * x.shape[3])


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _require_4d(a, "concat_channels")
    _require_4d(b, "concat_channels")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape}: N, H, W differ")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data.astype(a.dtype, copy=False)], axis=1)
    return record("concat_channels", out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def _sigmoid(z):
    # tanh form is overflow-free for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def activation(x: Tensor, kind: str = "relu") -> Tensor:
    if kind == "relu":
        mask = x.data > 0
        return record("relu", x.data * mask, (x,), lambda g: (g * mask,))
    if kind == "sigmoid":
        out = _sigmoid(x.data)
        return record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))
    if kind == "tanh":
        out = np.tanh(x.data)
        return record("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))
    if kind == "identity":
        return x
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    return activation(x, "tanh")


__all__ = [
    "ConvSpec", "conv2d", "axial_depthwise", "pointwise", "global_avg_pool",
    "downsample_max2", "upsample_bilinear2", "resample_bilinear",
    "interpolation_matrix", "concat_channels", "activation", "relu", "sigmoid",
    "tanh", "as_tensor",
]
