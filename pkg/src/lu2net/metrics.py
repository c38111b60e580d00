"""Image quality metrics: PSNR and SSIM (full reference), UCIQE (no reference).

Images are ``H x W x C`` arrays with values in [0, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .autograd import Tensor, no_grad
from .color import image_to_lab
from .exceptions import ShapeError
from .losses import LossConfig, ssim_index

PSNR_CAP = 100.0
UCIQE_COEFFS = (0.4680, 0.2745, 0.2576)
_SAT_EPS = 1e-8


@dataclass
class MetricRecord:
    image_id: str
    psnr: float
    ssim: float
    uciqe: float


def _pair(pred, ref) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if p.shape != r.shape:
        raise ShapeError(f"image shapes differ: {p.shape} vs {r.shape}")
    return p, r


def psnr(pred, ref, cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio in dB for peak value 1.0.

    Identical images return ``cap``.
    """
    p, r = _pair(pred, ref)
    mse = float(np.mean((p - r) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def _to_nchw(img: np.ndarray) -> Tensor:
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3:
        raise ShapeError(f"expected an H x W x C image, got shape {img.shape}")
    return Tensor(img.transpose(2, 0, 1)[None].copy())


def ssim_metric(pred, ref, cfg: LossConfig | None = None) -> float:
    """Mean gaussian-window SSIM, averaged over channels. Shares its
    implementation with the SSIM loss."""
    p, r = _pair(pred, ref)
    with no_grad():
        return float(ssim_index(_to_nchw(p), _to_nchw(r), cfg).data)


def uciqe(img, saturation: str = "ratio", coeffs: Sequence[float] = UCIQE_COEFFS) -> float:
    """Underwater colour image quality evaluation.

    ``c1 * std(chroma) + c2 * luminance contrast + c3 * mean saturation`` in
    CIELAB. Contrast is the 1st-to-99th percentile spread of L divided by
    100. ``saturation="ratio"`` uses ``C / sqrt(C^2 + L^2)``;
    ``saturation="c_over_l"`` uses ``C / L``.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"UCIQE needs an H x W x 3 image, got shape {arr.shape}")
    lab = image_to_lab(arr).reshape(-1, 3)
    L = lab[:, 0]
    chroma = np.hypot(lab[:, 1], lab[:, 2])
    sigma_c = float(np.std(chroma))
    lo, hi = np.percentile(L, [1, 99])
    contrast = float(hi - lo) / 100.0
    if saturation == "ratio":
        denom = np.sqrt(chroma ** 2 + L ** 2)
    elif saturation == "c_over_l":
        denom = L
    else:
        raise ValueError(f"unknown saturation definition {saturation!r}")
    sat = np.where(denom > _SAT_EPS, chroma / np.maximum(denom, _SAT_EPS), 0.0)
    c1, c2, c3 = coeffs
    return c1 * sigma_c + c2 * contrast + c3 * float(np.mean(sat))


def evaluate_pair(image_id: str, pred, ref, cfg: LossConfig | None = None) -> MetricRecord:
    return MetricRecord(image_id, psnr(pred, ref), ssim_metric(pred, ref, cfg), uciqe(pred))


def summarize(records: Sequence[MetricRecord]) -> MetricRecord:
    if not records:
        return MetricRecord("mean", float("nan"), float("nan"), float("nan"))
    return MetricRecord(
        "mean",
        float(np.mean([r.psnr for r in records])),
        float(np.mean([r.ssim for r in records])),
        float(np.mean([r.uciqe for r in records])),
    )


CSV_FIELDS = ("id", "psnr", "ssim", "uciqe")


def write_metrics_csv(records: Iterable[MetricRecord], path) -> MetricRecord:
    """One row per image, then a ``mean`` summary row. Returns the summary."""
    records = list(records)
    summary = summarize(records)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for rec in [*records, summary]:
            d = asdict(rec)
            writer.writerow([d["image_id"], f"{d['psnr']:.6f}", f"{d['ssim']:.6f}", f"{d['uciqe']:.6f}"])
    return summary
