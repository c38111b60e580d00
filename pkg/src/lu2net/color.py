"""Differentiable sRGB -> CIELAB -> LCh conversions (D65 white point).

Network outputs are denormalized to [0, 1] before they reach these
functions, so LAB and LCh values have their usual magnitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, record
from .exceptions import ColorSpaceError, ShapeError
from .ops import pointwise

SPACES = ("srgb01", "lab", "lch")

# linear sRGB -> XYZ, D65
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
# White point taken from the matrix rows so that RGB (1, 1, 1) lands exactly on it.
D65_WHITE = SRGB_TO_XYZ.sum(axis=1)
_RGB_TO_XYZN = SRGB_TO_XYZ / D65_WHITE[:, None]
_XYZN_TO_RGB = np.linalg.inv(_RGB_TO_XYZN)

# f(X/Xn), f(Y/Yn), f(Z/Zn) -> L, a, b
_F_TO_LAB = np.array([
    [0.0, 116.0, 0.0],
    [500.0, -500.0, 0.0],
    [0.0, 200.0, -200.0],
])
_LAB_OFFSET = np.array([-16.0, 0.0, 0.0])

GAMMA_BREAK = 0.04045
LINEAR_BREAK = 0.0031308
DELTA = 6.0 / 29.0
LAB_BREAK = DELTA ** 3
EPS_CHROMA = 1e-6


@dataclass(frozen=True)
class ColorTensor:
    """An ``N x 3 x H x W`` tensor tagged with the color space it lives in."""

    tensor: Tensor
    space: str
    clipped: np.ndarray | None = None

    def __post_init__(self):
        if self.space not in SPACES:
            raise ColorSpaceError(f"unknown color space {self.space!r}")
        t = self.tensor
        if t.ndim != 4 or t.shape[1] != 3:
            raise ShapeError(f"color tensors must be N x 3 x H x W, got {t.shape}")

    @classmethod
    def srgb(cls, x) -> "ColorTensor":
        return cls(ag.as_tensor(x), "srgb01")

    @classmethod
    def from_image(cls, img: np.ndarray, space: str = "srgb01") -> "ColorTensor":
        """Wrap an ``H x W x 3`` array."""
        arr = np.asarray(img, dtype=np.float64)
        return cls(Tensor(arr.transpose(2, 0, 1)[None].copy()), space)

    def to_image(self) -> np.ndarray:
        """First batch element as an ``H x W x 3`` array."""
        return self.tensor.data[0].transpose(1, 2, 0)

    def numpy(self) -> np.ndarray:
        return self.tensor.data

    @property
    def out_of_gamut(self) -> bool:
        return bool(self.clipped is not None and self.clipped.any())


def _expect(x: ColorTensor, space: str):
    if not isinstance(x, ColorTensor):
        raise ColorSpaceError(f"expected a ColorTensor tagged {space!r}, got {type(x).__name__}")
    if x.space != space:
        raise ColorSpaceError(f"expected a {space!r} tensor, got {x.space!r}")


def _gamma_expand(c):
    return np.where(c <= GAMMA_BREAK, c / 12.92, ((np.maximum(c, GAMMA_BREAK) + 0.055) / 1.055) ** 2.4)


def _gamma_expand_grad(c):
    # right-hand derivative at the breakpoint
    power = 2.4 / 1.055 * ((np.maximum(c, GAMMA_BREAK) + 0.055) / 1.055) ** 1.4
    return np.where(c < GAMMA_BREAK, 1.0 / 12.92, power)


def _gamma_compress(lin):
    safe = np.maximum(lin, LINEAR_BREAK)
    return np.where(lin <= LINEAR_BREAK, 12.92 * lin, 1.055 * safe ** (1 / 2.4) - 0.055)


def _lab_f(t):
    return np.where(t > LAB_BREAK, np.cbrt(t), t / (3 * DELTA ** 2) + 4.0 / 29.0)


def _lab_f_grad(t):
    safe = np.maximum(t, LAB_BREAK)
    return np.where(t < LAB_BREAK, 1.0 / (3 * DELTA ** 2), 1.0 / (3.0 * np.cbrt(safe) ** 2))


def _lab_f_inv(f):
    return np.where(f > DELTA, f ** 3, 3 * DELTA ** 2 * (f - 4.0 / 29.0))


def srgb_to_lab(x: ColorTensor) -> ColorTensor:
    """sRGB in [0, 1] -> CIELAB. Inputs are clamped to [0, 1] first."""
    _expect(x, "srgb01")
    t = x.tensor
    dt = t.dtype
    rgb = ag.clip(t, 0.0, 1.0)
    lin = ag.elementwise(rgb, _gamma_expand, _gamma_expand_grad, "srgb_gamma")
    xyz = pointwise(lin, Tensor(_RGB_TO_XYZN.astype(dt)))
    f = ag.elementwise(xyz, _lab_f, _lab_f_grad, "lab_f")
    lab = pointwise(f, Tensor(_F_TO_LAB.astype(dt)), Tensor(_LAB_OFFSET.astype(dt)))
    return ColorTensor(lab, "lab")


def lab_to_srgb(x: ColorTensor) -> ColorTensor:
    """Inverse of :func:`srgb_to_lab`. Out-of-gamut values are clamped and
    recorded in ``clipped``. Not differentiable."""
    _expect(x, "lab")
    lab = x.tensor.data
    L, a, b = lab[:, 0], lab[:, 1], lab[:, 2]
    fy = (L + 16.0) / 116.0
    f = np.stack([fy + a / 500.0, fy, fy - b / 200.0], axis=1)
    xyz = _lab_f_inv(f)
    lin = np.einsum("oc,nchw->nohw", _XYZN_TO_RGB.astype(lab.dtype), xyz)
    rgb = _gamma_compress(lin)
    clipped = (rgb < 0.0) | (rgb > 1.0)
    return ColorTensor(Tensor(np.clip(rgb, 0.0, 1.0)), "srgb01", clipped)


def lab_to_lch(x: ColorTensor) -> ColorTensor:
    """L passes through, C = |(a, b)|, H = atan2(b, a) in (-pi, pi].

    Where C < 1e-6 the hue is pinned to 0 and both C and H pass no gradient.
    """
    _expect(x, "lab")
    t = x.tensor
    lab = t.data
    L, a, b = lab[:, 0], lab[:, 1], lab[:, 2]
    c = np.sqrt(a * a + b * b)
    flat = c < EPS_CHROMA
    h = np.where(flat, 0.0, np.arctan2(b, a))
    h = np.where(h <= -math.pi, h + 2 * math.pi, h)
    out = np.stack([L, c, h], axis=1).astype(lab.dtype)
    safe_c = np.where(flat, 1.0, c)

    def vjp(g):
        gL, gc, gh = g[:, 0], g[:, 1], g[:, 2]
        ga = np.where(flat, 0.0, gc * a / safe_c - gh * b / safe_c ** 2)
        gb = np.where(flat, 0.0, gc * b / safe_c + gh * a / safe_c ** 2)
        return (np.stack([gL, ga, gb], axis=1).astype(lab.dtype),)

    return ColorTensor(record("lab_to_lch", out, (t,), vjp), "lch")


def srgb_to_lch(x: ColorTensor) -> ColorTensor:
    return lab_to_lch(srgb_to_lab(x))


def hue_distance(h1, h2):
    """Circular distance between hue angles, in [0, pi]."""
    d = np.abs(np.asarray(h1, dtype=np.float64) - np.asarray(h2, dtype=np.float64)) % (2 * math.pi)
    res = np.minimum(d, 2 * math.pi - d)
    return float(res) if res.ndim == 0 else res


def wrapped_hue_difference(h1: Tensor, h2: Tensor) -> Tensor:
    """Signed hue difference wrapped into [-pi, pi]; its magnitude is
    :func:`hue_distance`. Gradient is +1 / -1 away from the wrap point."""
    d = ag.sub(h1, h2)
    wrapped = d.data - 2 * math.pi * np.round(d.data / (2 * math.pi))
    return record("wrap_angle", wrapped, (d,), lambda g: (g,))


def image_to_lab(img: np.ndarray) -> np.ndarray:
    """Convenience: ``H x W x 3`` sRGB array -> ``H x W x 3`` LAB array."""
    with ag.no_grad():
        return srgb_to_lab(ColorTensor.from_image(img)).to_image()
