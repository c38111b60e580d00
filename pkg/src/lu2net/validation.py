"""Input validation helpers for the estimator interface."""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError


def check_images(X, name: str = "X", allow_single: bool = True) -> np.ndarray:
    """Return ``X`` as an ``n x H x W x 3`` float32 array in [0, 1].

    Accepts uint8 (scaled by 1/255) or float input; a single ``H x W x 3``
    image is promoted to a batch of one when ``allow_single`` is set.
    """
    arr = np.asarray(X)
    if arr.ndim == 3 and allow_single:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ShapeError(f"{name} must be an n x H x W x 3 image batch, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    if not np.issubdtype(arr.dtype, np.number):
        raise TypeError(f"{name} must be numeric, got dtype {arr.dtype}")
    arr = arr.astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1] (got [{arr.min():.4g}, {arr.max():.4g}])")
    return arr


def check_paired(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = check_images(X, "X")
    y = check_images(y, "y")
    if X.shape != y.shape:
        raise ShapeError(f"X {X.shape} and y {y.shape} must have the same shape")
    return X, y


def check_divisible(height: int, width: int, depth: int) -> None:
    m = 2 ** depth
    if height % m or width % m:
        raise ShapeError(f"image size {height}x{width} must be divisible by {m} for a {depth}-stage network")
