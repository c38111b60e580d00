import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lu2net.autograd import Tensor
from lu2net.checkpoint import load_tensors
from lu2net.data import PairedDataset
from lu2net.exceptions import ConfigError, TrainingHalted
from lu2net.network import NetworkConfig, init_params
from lu2net.train import (LOG_FIELDS, AdamState, TrainConfig, adam_step, epoch_seed, lr_at,
                          train)

from oracles import adam_scalar

TINY = NetworkConfig((4, 8), axial_k=3, ca_reduction=2)


def toy_split(rng, n=6, size=16):
    gt = rng.uniform(0.2, 0.8, (n, size, size, 3)).astype(np.float32)
    inp = np.clip(gt * 0.7 + 0.1, 0, 1).astype(np.float32)
    return PairedDataset.from_arrays(inp, gt).subset(range(n))


def test_schedule_values():
    assert [lr_at(e) for e in (0, 39, 40, 80, 120, 149)] == [
        0.0005, 0.0005, 0.0004, 0.00032, 0.000256, 0.000256]
    assert lr_at(10, TrainConfig(lr0=0.1, lr_decay=0.5, decay_every=5)) == 0.025
    with pytest.raises(ValueError):
        lr_at(-1)


@given(st.integers(0, 1000))
def test_schedule_piecewise_constant(e):
    assert lr_at(e + 1) <= lr_at(e)
    if (e + 1) % 40:
        assert lr_at(e + 1) == lr_at(e)
    else:
        assert lr_at(e + 1) == pytest.approx(0.8 * lr_at(e))


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr0=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_zero_gradient_is_noop():
    p = {"w": Tensor(np.array([1.0, -2.0]))}
    state = AdamState()
    for _ in range(3):
        adam_step(p, {"w": np.zeros(2)}, state, lr=0.1)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])
    assert state.t == 3


def test_first_step_moves_by_lr():
    p = {"w": Tensor(np.array([0.5]))}
    adam_step(p, {"w": np.array([1.0])}, AdamState(), lr=0.001)
    assert p["w"].data[0] == pytest.approx(0.5 - 0.001 / (1 + 1e-8), abs=1e-15)


def test_five_steps_match_scalar_oracle():
    p = {"w": Tensor(np.array([1.0]))}
    state = AdamState()
    traj = [1.0]
    for _ in range(5):
        adam_step(p, {"w": 2 * p["w"].data}, state, lr=0.1)
        traj.append(float(p["w"].data[0]))
    ref = adam_scalar(1.0, lambda w: 2 * w, 5, 0.1)
    np.testing.assert_allclose(traj, ref, rtol=0, atol=1e-12)
    assert all(abs(a) > abs(b) for a, b in zip(traj, traj[1:]))


def test_non_finite_gradient_names_parameter():
    p = {"a": Tensor(np.ones(2)), "b": Tensor(np.ones(2))}
    state = AdamState()
    with pytest.raises(TrainingHalted, match="'b'"):
        adam_step(p, {"a": np.ones(2), "b": np.array([1.0, np.nan])}, state, lr=0.1)
    assert state.t == 0
    np.testing.assert_array_equal(p["a"].data, np.ones(2))


def test_state_tensor_round_trip():
    state = AdamState({"w": np.ones(3)}, {"w": np.full(3, 2.0)}, 7)
    back = AdamState.from_tensors(state.to_tensors())
    assert back.t == 7
    np.testing.assert_array_equal(back.v["w"], state.v["w"])


def test_zero_epochs_leaves_net_unchanged(rng, tmp_path):
    net = init_params(TINY, seed=0)
    before = {k: t.data.copy() for k, t in net.params.items()}
    result = train(net, toy_split(rng), TrainConfig(epochs=0), out_dir=tmp_path)
    assert result.log == [] and result.step_losses == []
    assert all(before[k].tobytes() == t.data.tobytes() for k, t in net.params.items())


def test_epoch_log_and_checkpoints(rng, tmp_path):
    net = init_params(TINY, seed=0)
    split = toy_split(rng)
    cfg = TrainConfig(epochs=2, batch_size=4, lr0=1e-3, checkpoint_every=1)
    result = train(net, split, cfg, test_split=split, out_dir=tmp_path)
    rows = list(csv.DictReader((tmp_path / "epoch_log.csv").open()))
    assert tuple(rows[0]) == LOG_FIELDS
    assert [int(r["epoch"]) for r in rows] == [0, 1]
    assert math.isfinite(float(rows[1]["test_psnr"]))
    assert len(result.step_losses) == 4
    assert (tmp_path / "epoch_0000.lu2n").exists() and (tmp_path / "final.lu2n").exists()
    tensors = load_tensors(tmp_path / "final.lu2n")
    assert tensors["adam.t"][0] == 4 and tensors["train.epoch"][0] == 1


def test_max_steps(rng):
    result = train(init_params(TINY), toy_split(rng), TrainConfig(epochs=5, batch_size=2, max_steps=4))
    assert len(result.step_losses) == 4


def test_resume_matches_uninterrupted(rng, tmp_path):
    split = toy_split(rng)
    cfg = TrainConfig(epochs=2, batch_size=4, lr0=1e-3, checkpoint_every=1, seed=3)
    train(init_params(TINY, seed=1), split, cfg, out_dir=tmp_path / "full")
    half = TrainConfig(epochs=1, batch_size=4, lr0=1e-3, checkpoint_every=1, seed=3)
    train(init_params(TINY, seed=1), split, half, out_dir=tmp_path / "a")
    train(init_params(TINY, seed=1), split, cfg, out_dir=tmp_path / "b",
          resume_from=tmp_path / "a" / "epoch_0000.lu2n")
    assert (tmp_path / "full" / "final.lu2n").read_bytes() == (tmp_path / "b" / "final.lu2n").read_bytes()


def test_prefetch_does_not_change_results(rng):
    split = toy_split(rng)
    a = train(init_params(TINY), split, TrainConfig(epochs=1, batch_size=2))
    b = train(init_params(TINY), split, TrainConfig(epochs=1, batch_size=2, prefetch=2))
    assert a.step_losses == b.step_losses


def test_grad_clip_runs(rng):
    result = train(init_params(TINY), toy_split(rng), TrainConfig(epochs=1, batch_size=3, grad_clip=1e-3))
    assert all(math.isfinite(v) for v in result.step_losses)


def test_non_finite_loss_halts(rng):
    net = init_params(TINY)
    net.params["head.bias"].data[:] = np.nan
    with pytest.raises(TrainingHalted, match="non-finite"):
        train(net, toy_split(rng), TrainConfig(epochs=1))


def test_epoch_seed_distinct():
    assert len({epoch_seed(s, e) for s in range(5) for e in range(100)}) == 500
