"""LU2Net blocks and U-shape assembly.

Each block runs axial depthwise convolution, a pointwise channel mix, an
activation, then channel attention. Encoders are each followed by 2x2 max
pooling; decoders upsample, concatenate the same-resolution skip, and run
the same block body. A pointwise head maps back to RGB.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .autograd import Tensor, no_grad
from .exceptions import ConfigError, ShapeError
from .ops import (
    ACTIVATIONS,
    activation,
    axial_depthwise,
    concat_channels,
    downsample_max2,
    global_avg_pool,
    pointwise,
    upsample_bilinear2,
)

DEFAULT_WIDTHS = (64, 128, 128, 128)


@dataclass
class NetworkConfig:
    stage_widths: tuple[int, ...] = DEFAULT_WIDTHS
    axial_k: int = 7
    ca_reduction: int = 8
    activation: str = "relu"
    output_activation: str = "tanh"
    input_channels: int = 3
    output_channels: int = 3

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        if not self.stage_widths or any(w <= 0 for w in self.stage_widths):
            raise ConfigError(f"stage_widths must be nonempty and positive, got {self.stage_widths}")
        if self.axial_k < 3 or self.axial_k % 2 == 0:
            raise ConfigError(f"axial_k must be odd and >= 3, got {self.axial_k}")
        if self.ca_reduction < 1:
            raise ConfigError(f"ca_reduction must be >= 1, got {self.ca_reduction}")
        for w in self.stage_widths:
            if w // self.ca_reduction < 1:
                raise ConfigError(f"stage width {w} is smaller than ca_reduction {self.ca_reduction}")
        for kind in (self.activation, self.output_activation):
            if kind not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {kind!r}")

    @property
    def depth(self) -> int:
        return len(self.stage_widths)

    def block_channels(self) -> list[tuple[str, int, int]]:
        """(name, in_channels, out_channels) for every block, in forward order."""
        blocks = []
        cin = self.input_channels
        for i, w in enumerate(self.stage_widths):
            blocks.append((f"enc{i}", cin, w))
            cin = w
        deep = self.stage_widths[-1]
        for i in reversed(range(self.depth)):
            out = self.stage_widths[i - 1] if i > 0 else self.stage_widths[0]
            blocks.append((f"dec{i}", deep + self.stage_widths[i], out))
            deep = out
        return blocks


@dataclass
class CALayerParams:
    squeeze_w: Tensor
    squeeze_b: Tensor
    excite_w: Tensor
    excite_b: Tensor

    @property
    def channels(self) -> int:
        return self.excite_w.shape[0]


@dataclass
class BlockParams:
    h_kernels: Tensor
    v_kernels: Tensor
    pw_w: Tensor
    pw_b: Tensor
    ca: CALayerParams

    @property
    def in_channels(self) -> int:
        return self.pw_w.shape[1]


def calayer(x: Tensor, p: CALayerParams) -> Tensor:
    """Channel attention: pool, squeeze-excite MLP, sigmoid gate, rescale."""
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeError(f"CALayer for {p.channels} channels got input shape {x.shape}")
    w0 = global_avg_pool(x)
    hidden = activation(pointwise(w0, p.squeeze_w, p.squeeze_b), "relu")
    w = activation(pointwise(hidden, p.excite_w, p.excite_b), "sigmoid")
    return x * w


def _block_body(x: Tensor, p: BlockParams, act: str) -> Tensor:
    y = axial_depthwise(x, p.h_kernels, p.v_kernels)
    y = pointwise(y, p.pw_w, p.pw_b)
    y = activation(y, act)
    return calayer(y, p.ca)


def encoder_block(x: Tensor, p: BlockParams, act: str = "relu") -> Tensor:
    if x.ndim != 4 or x.shape[1] != p.in_channels:
        raise ShapeError(f"encoder block expects {p.in_channels} channels, got shape {x.shape}")
    return _block_body(x, p, act)


def decoder_block(x: Tensor, skip: Tensor, p: BlockParams, act: str = "relu") -> Tensor:
    up = upsample_bilinear2(x)
    if up.shape[2:] != skip.shape[2:]:
        raise ShapeError(f"upsampled input {up.shape} does not match skip {skip.shape}")
    merged = concat_channels(up, skip)
    if merged.shape[1] != p.in_channels:
        raise ShapeError(f"decoder block expects {p.in_channels} channels, got {merged.shape[1]}")
    return _block_body(merged, p, act)


@dataclass
class Network:
    config: NetworkConfig
    params: dict[str, Tensor] = field(repr=False)

    def __post_init__(self):
        for name, t in self.params.items():
            t.name = name

    def block(self, name: str) -> BlockParams:
        p = self.params
        return BlockParams(
            p[f"{name}.axial.h"], p[f"{name}.axial.v"],
            p[f"{name}.pw.weight"], p[f"{name}.pw.bias"],
            CALayerParams(p[f"{name}.ca.squeeze.weight"], p[f"{name}.ca.squeeze.bias"],
                          p[f"{name}.ca.excite.weight"], p[f"{name}.ca.excite.bias"]),
        )

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def check_input(self, x: Tensor):
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.input_channels:
            raise ShapeError(f"expected N x {cfg.input_channels} x H x W input, got {x.shape}")
        m = 2 ** cfg.depth
        if x.shape[2] % m or x.shape[3] % m:
            raise ShapeError(f"height and width must be divisible by {m} "
                             f"(2^{cfg.depth} stages), got {x.shape[2]}x{x.shape[3]}")

    def forward(self, x) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        self.check_input(x)
        cfg = self.config
        skips = []
        for i in range(cfg.depth):
            x = encoder_block(x, self.block(f"enc{i}"), cfg.activation)
            skips.append(x)
            x = downsample_max2(x)
        for i in reversed(range(cfg.depth)):
            x = decoder_block(x, skips[i], self.block(f"dec{i}"), cfg.activation)
        x = pointwise(x, self.params["head.weight"], self.params["head.bias"])
        return activation(x, cfg.output_activation)

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        with no_grad():
            return self.forward(x).data


def parameter_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in a stable order."""
    shapes: dict[str, tuple[int, ...]] = {}
    k, r = config.axial_k, config.ca_reduction
    for name, cin, cout in config.block_channels():
        hidden = cout // r
        shapes[f"{name}.axial.h"] = (cin, k)
        shapes[f"{name}.axial.v"] = (cin, k)
        shapes[f"{name}.pw.weight"] = (cout, cin)
        shapes[f"{name}.pw.bias"] = (cout,)
        shapes[f"{name}.ca.squeeze.weight"] = (hidden, cout)
        shapes[f"{name}.ca.squeeze.bias"] = (hidden,)
        shapes[f"{name}.ca.excite.weight"] = (cout, hidden)
        shapes[f"{name}.ca.excite.bias"] = (cout,)
    shapes["head.weight"] = (config.output_channels, config.stage_widths[0])
    shapes["head.bias"] = (config.output_channels,)
    return shapes


def init_params(config: NetworkConfig | None = None, seed: int = 0, dtype=np.float32) -> Network:
    """Kaiming-uniform weights (fan-in, ReLU gain), zero biases."""
    config = config or NetworkConfig()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            # every weight is (out, fan_in); axial kernels are (C, k) with fan-in k
            bound = np.sqrt(6.0 / shape[1])
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True)
    return Network(config, params)


def count_params(net: Network) -> int:
    return sum(t.size for t in net.params.values())


def _dims(input_dims) -> tuple[int, int, int]:
    dims = tuple(int(d) for d in input_dims)
    if len(dims) == 2:
        return 1, dims[0], dims[1]
    if len(dims) == 4:
        return dims[0], dims[2], dims[3]
    raise ShapeError(f"input_dims must be (H, W) or (N, C, H, W), got {input_dims}")


def layer_table(net: Network, input_dims) -> list[dict]:
    """Per-layer rows: name, shape, params and multiply-accumulates."""
    n, h, w = _dims(input_dims)
    cfg = net.config
    res = {}
    for i in range(cfg.depth):
        res[f"enc{i}"] = res[f"dec{i}"] = (h >> i) * (w >> i)
    rows = []
    for name, t in net.params.items():
        block, *rest = name.split(".")
        kind = rest[0] if rest else ""
        pixels = h * w if block == "head" else res[block]
        leaf = rest[-1]
        if leaf == "bias" or kind == "ca":
            macs = 0
        else:
            macs = n * pixels * t.size
        rows.append({"name": name, "shape": t.shape, "params": t.size, "macs": macs})
    return rows


def count_macs(net: Network, input_dims) -> int:
    return sum(row["macs"] for row in layer_table(net, input_dims))


def count_flops(net: Network, input_dims, ops_per_mac: int = 2) -> int:
    """Multiply-accumulates of the axial and pointwise layers times
    ``ops_per_mac``.

    The attention MLP runs once per image on pooled values, so it is left out
    and the count scales exactly with image area. Pooling, resampling,
    activations and adds are excluded too.
    """
    return ops_per_mac * count_macs(net, input_dims)
