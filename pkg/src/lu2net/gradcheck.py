"""Central finite-difference checks of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor, backward
from .exceptions import ConfigError, NumericError


def _scalarize(out: Tensor, projection: np.ndarray | None) -> Tensor:
    if out.size == 1:
        return out.reshape(())
    return (out * Tensor(projection)).sum()


def grad_check_many(fn: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-5,
                    max_entries: int | None = None, seed: int = 0, floor_ratio: float = 1e-5) -> float:
    """Max relative error between tape and finite-difference gradients.

    Non-scalar outputs are reduced with a fixed random projection so every
    output element contributes. ``max_entries`` caps how many coordinates of
    each input are probed (chosen at random); ``None`` probes all of them.
    Relative error uses ``max(|a|, |b|, 1e-8, floor_ratio * G)`` as the
    denominator, where ``G`` is the largest analytic gradient magnitude. The
    last term keeps coordinates whose gradient sits near the finite-difference
    roundoff level (about ``eps * |f| / step``) from dominating the result.
    """
    if step <= 0:
        raise ConfigError(f"finite-difference step must be positive, got {step}")
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
    out = fn(*inputs)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("function output contains non-finite values")
    projection = None if out.size == 1 else rng.standard_normal(out.shape).astype(out.dtype)
    grads = backward(_scalarize(out, projection))

    def value():
        v = _scalarize(fn(*inputs), projection).data
        if not np.isfinite(v):
            raise NumericError("non-finite value during finite differencing")
        return float(v)

    scale = max(float(np.max(np.abs(grads[t]), initial=0.0)) for t in inputs)
    floor = max(1e-8, floor_ratio * scale)
    worst = 0.0
    for t in inputs:
        analytic = grads[t]
        if not np.all(np.isfinite(analytic)):
            raise NumericError(f"non-finite analytic gradient for {t!r}")
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        a_flat = analytic.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = value()
            flat[i] = orig - step
            down = value()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = float(a_flat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst


def grad_check(fn: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """Max relative error of ``d fn / d x`` against central differences."""
    return grad_check_many(fn, [x], step)
