import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lu2net.autograd import Tensor
from lu2net.exceptions import ShapeError
from lu2net.losses import LossConfig, ssim_loss
from lu2net.metrics import (PSNR_CAP, MetricRecord, evaluate_pair, psnr, ssim_metric, summarize,
                            uciqe, write_metrics_csv)

from oracles import constant_ssim, gray_L, psnr_oracle


def test_psnr_cap_and_offset(rng):
    x = rng.uniform(0, 0.8, (8, 8, 3))
    assert psnr(x, x) == PSNR_CAP == 100.0
    assert psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-6)


def test_psnr_matches_loop_oracle(rng):
    a, b = rng.uniform(0, 1, (2, 9, 7, 3))
    assert psnr(a, b) == pytest.approx(psnr_oracle(a, b), abs=1e-6)


def test_psnr_decreases_with_mse(rng):
    ref = rng.uniform(0.2, 0.8, (8, 8, 3))
    noise = rng.standard_normal(ref.shape)
    values = [psnr(ref + s * noise, ref) for s in (0.01, 0.02, 0.05, 0.1)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_ssim_identity_and_constant(rng):
    x = rng.uniform(0, 1, (16, 16, 3))
    assert ssim_metric(x, x) == pytest.approx(1.0, abs=1e-12)
    got = ssim_metric(np.full((16, 16, 3), 0.5), np.full((16, 16, 3), 0.6))
    assert got == pytest.approx(constant_ssim(0.5, 0.6), abs=1e-12)


def test_ssim_bounded_and_loss_consistent(rng):
    a, b = rng.uniform(0, 1, (2, 20, 20, 3))
    s = ssim_metric(a, b)
    assert s < 1
    loss = float(ssim_loss(Tensor(a.transpose(2, 0, 1)[None].copy()),
                           Tensor(b.transpose(2, 0, 1)[None].copy()), LossConfig()).data)
    assert abs((1 - s) - loss) < 1e-7


def test_uciqe_constant_gray_is_zero():
    assert uciqe(np.full((8, 8, 3), 0.4)) == pytest.approx(0.0, abs=1e-9)
    assert uciqe(np.full((8, 8, 3), 0.4), saturation="c_over_l") == pytest.approx(0.0, abs=1e-9)


def test_uciqe_half_black_half_white():
    img = np.zeros((10, 10, 3))
    img[:, 5:] = 1.0
    # L spans 0 to 100, and the 1st/99th percentiles of a 50/50 split land on the extremes
    contrast = (gray_L(1.0) - gray_L(0.0)) / 100
    assert uciqe(img) == pytest.approx(0.2745 * contrast, abs=1e-9)


def test_uciqe_unknown_saturation():
    with pytest.raises(ValueError):
        uciqe(np.zeros((4, 4, 3)), saturation="hsv")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), op=st.sampled_from(["fliplr", "flipud", "rot90"]))
def test_uciqe_permutation_invariant(seed, op):
    img = np.random.default_rng(seed).uniform(0, 1, (9, 9, 3))
    moved = getattr(np, op)(img)
    assert uciqe(moved) == pytest.approx(uciqe(img), abs=1e-12)


def test_csv_with_summary(tmp_path, rng):
    a, b = rng.uniform(0, 1, (2, 16, 16, 3))
    records = [evaluate_pair("x", a, b), evaluate_pair("y", b, b)]
    path = tmp_path / "m.csv"
    summary = write_metrics_csv(records, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["id", "psnr", "ssim", "uciqe"]
    assert [r[0] for r in rows[1:]] == ["x", "y", "mean"]
    assert summary.psnr == pytest.approx((records[0].psnr + 100.0) / 2)
    assert float(rows[-1][1]) == pytest.approx(summary.psnr, abs=1e-6)


def test_summarize_empty():
    s = summarize([])
    assert isinstance(s, MetricRecord) and np.isnan(s.psnr)
