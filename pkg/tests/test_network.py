import numpy as np
import pytest

from lu2net.autograd import Tensor, backward
from lu2net.checkpoint import network_tensors
from lu2net.exceptions import ConfigError, ShapeError
from lu2net.gradcheck import grad_check_many
from lu2net.losses import LossConfig, total_loss
from lu2net.network import (DEFAULT_WIDTHS, BlockParams, CALayerParams, NetworkConfig, calayer,
                            count_flops, count_macs, count_params, decoder_block, encoder_block,
                            init_params, layer_table, parameter_shapes)
from lu2net.ops import axial_depthwise, pointwise, upsample_bilinear2

from oracles import axial_block_oracle, calayer_oracle

TOL = 1e-4


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def ca_params(rng, c, hidden):
    return CALayerParams(T(rng.standard_normal((hidden, c)), True), T(rng.standard_normal(hidden), True),
                         T(rng.standard_normal((c, hidden)), True), T(rng.standard_normal(c), True))


def block_params(rng, cin, cout, k=3, hidden=2):
    return BlockParams(T(0.3 * rng.standard_normal((cin, k)), True), T(0.3 * rng.standard_normal((cin, k)), True),
                       T(rng.standard_normal((cout, cin)), True), T(0.1 * rng.standard_normal(cout), True),
                       ca_params(rng, cout, hidden))


def identity_block(cin, cout, k=3):
    """Zero axial kernels, identity pointwise on the first channels, CA gate pinned at 1."""
    pw = np.zeros((cout, cin))
    pw[np.arange(min(cin, cout)), np.arange(min(cin, cout))] = 1.0
    ca = CALayerParams(T(np.zeros((1, cout))), T(np.zeros(1)), T(np.zeros((cout, 1))), T(np.full(cout, 60.0)))
    return BlockParams(T(np.zeros((cin, k))), T(np.zeros((cin, k))), T(pw), T(np.zeros(cout)), ca)


# channel attention

def test_calayer_zero_mlp_halves(rng):
    x = rng.standard_normal((2, 4, 3, 3))
    p = CALayerParams(T(np.zeros((2, 4))), T(np.zeros(2)), T(np.zeros((4, 2))), T(np.zeros(4)))
    np.testing.assert_array_equal(calayer(T(x), p).data, 0.5 * x)


def test_calayer_saturated_gate_zeroes(rng):
    x = rng.standard_normal((1, 4, 3, 3))
    p = CALayerParams(T(np.zeros((2, 4))), T(np.zeros(2)), T(np.zeros((4, 2))), T(np.full(4, -30.0)))
    assert np.max(np.abs(calayer(T(x), p).data)) < 1e-9


def test_calayer_matches_scalar_oracle(rng):
    x = rng.standard_normal((2, 6, 5, 4))
    p = ca_params(rng, 6, 3)
    ref = calayer_oracle(x, p.squeeze_w.data, p.squeeze_b.data, p.excite_w.data, p.excite_b.data)
    np.testing.assert_allclose(calayer(T(x), p).data, ref, atol=1e-12)


def test_calayer_gate_in_unit_interval(rng):
    x = 50 * rng.standard_normal((1, 4, 3, 3))
    p = ca_params(rng, 4, 2)
    gate = calayer(T(x), p).data / x
    assert np.all((gate > 0) & (gate < 1))


def test_calayer_shape_error(rng):
    with pytest.raises(ShapeError):
        calayer(T(rng.standard_normal((1, 3, 2, 2))), ca_params(rng, 4, 2))


def test_calayer_gradient(rng):
    x = T(rng.standard_normal((2, 4, 3, 3)), True)
    p = ca_params(rng, 4, 2)
    ins = [x, p.squeeze_w, p.squeeze_b, p.excite_w, p.excite_b]
    # probe away from the ReLU kink in the squeeze layer
    p.squeeze_b.data = p.squeeze_b.data + np.sign(p.squeeze_b.data) * 0.5
    err = grad_check_many(lambda x, a, b, c, d: calayer(x, CALayerParams(a, b, c, d)), ins)
    assert err < TOL


# axial block semantics

def test_axial_then_pointwise_matches_algorithm_oracle(rng):
    x = rng.standard_normal((1, 3, 7, 6))
    hk, vk = rng.standard_normal((2, 3, 5))
    w, b = rng.standard_normal((4, 3)), rng.standard_normal(4)
    out = pointwise(axial_depthwise(T(x), T(hk), T(vk)), T(w), T(b)).data
    np.testing.assert_allclose(out, axial_block_oracle(x, hk, vk, w, b), atol=1e-12)


# blocks

def test_identity_encoder_block_is_relu(rng):
    x = rng.standard_normal((2, 4, 6, 6))
    np.testing.assert_allclose(encoder_block(T(x), identity_block(4, 4)).data, np.maximum(x, 0), atol=1e-12)


def test_zero_input_gives_zero_output(rng):
    p = block_params(rng, 3, 4)
    p.pw_b.data[:] = 0.0
    assert not encoder_block(T(np.zeros((1, 3, 4, 4))), p).data.any()


def test_identity_decoder_with_zero_skip(rng):
    x = rng.standard_normal((1, 3, 4, 4))
    skip = np.zeros((1, 2, 8, 8))
    out = decoder_block(T(x), T(skip), identity_block(5, 3)).data
    ref = encoder_block(upsample_bilinear2(T(x)), identity_block(3, 3)).data
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_decoder_resolution_mismatch(rng):
    with pytest.raises(ShapeError):
        decoder_block(T(np.zeros((1, 2, 4, 4))), T(np.zeros((1, 2, 6, 6))), identity_block(4, 2))


def test_encoder_block_gradient(rng):
    p = block_params(rng, 3, 4)
    x = T(rng.standard_normal((2, 3, 6, 6)), True)
    ins = [x, p.h_kernels, p.v_kernels, p.pw_w, p.pw_b, p.ca.squeeze_w, p.ca.squeeze_b,
           p.ca.excite_w, p.ca.excite_b]

    def fn(x, h, v, w, b, sw, sb, ew, eb):
        return encoder_block(x, BlockParams(h, v, w, b, CALayerParams(sw, sb, ew, eb)))

    assert grad_check_many(fn, ins) < TOL


def test_decoder_block_gradient(rng):
    p = block_params(rng, 5, 3)
    x = T(rng.standard_normal((1, 3, 3, 3)), True)
    skip = T(rng.standard_normal((1, 2, 6, 6)), True)
    assert grad_check_many(lambda x, s, w: decoder_block(x, s, BlockParams(p.h_kernels, p.v_kernels, w, p.pw_b, p.ca)),
                           [x, skip, p.pw_w]) < TOL


def test_block_receptive_field_stays_a_cross(rng):
    p = block_params(rng, 2, 3, k=7)
    p.ca = CALayerParams(*(T(np.zeros(a.shape)) for a in (p.ca.squeeze_w, p.ca.squeeze_b,
                                                         p.ca.excite_w, p.ca.excite_b)))
    x = Tensor(rng.uniform(0.5, 1.5, (1, 2, 15, 15)), requires_grad=True)
    out = axial_depthwise(x, p.h_kernels, p.v_kernels)
    out = pointwise(out, p.pw_w, p.pw_b)
    seed = np.zeros(out.shape)
    seed[0, 1, 7, 7] = 1.0
    g = backward(out, seed)[x]
    cross = np.zeros((15, 15), dtype=bool)
    cross[7, 4:11] = cross[4:11, 7] = True
    for c in range(2):
        np.testing.assert_array_equal(g[0, c] != 0, cross)


# full network

def test_forward_shape_and_range(rng):
    net = init_params(NetworkConfig((8, 16)), seed=1)
    x = rng.uniform(-1, 1, (2, 3, 16, 16)).astype(np.float32)
    out = net.predict(x)
    assert out.shape == x.shape and out.dtype == np.float32
    assert np.all(np.abs(out) <= 1)
    np.testing.assert_array_equal(out, net.predict(x))


def test_default_net_256_shape(rng):
    net = init_params()
    out = net.predict(rng.uniform(-1, 1, (1, 3, 256, 256)).astype(np.float32))
    assert out.shape == (1, 3, 256, 256)
    assert np.all(np.isfinite(out)) and np.all(np.abs(out) <= 1)


def test_indivisible_input(rng):
    net = init_params(NetworkConfig((4, 8, 8), ca_reduction=2))
    with pytest.raises(ShapeError, match="divisible by 8"):
        net.predict(np.zeros((1, 3, 12, 16), dtype=np.float32))


def test_tiny_net_full_loss_gradient(rng):
    cfg = NetworkConfig((4, 8), axial_k=3, ca_reduction=2)
    net = init_params(cfg, seed=3, dtype=np.float64)
    x = rng.uniform(-0.7, 0.7, (1, 3, 16, 16))
    y = rng.uniform(-0.7, 0.7, (1, 3, 16, 16))
    names = ["enc0.axial.h", "dec0.pw.weight", "enc1.ca.excite.bias", "head.weight"]

    def fn(*params):
        for n, p in zip(names, params):
            net.params[n] = p
        return total_loss(net(Tensor(x)), Tensor(y), LossConfig()).tensor

    assert grad_check_many(fn, [net.params[n] for n in names], max_entries=12) < TOL


def test_init_is_seeded():
    a, b, c = init_params(seed=5), init_params(seed=5), init_params(seed=6)
    assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)
    assert any(a.params[k].data.tobytes() != c.params[k].data.tobytes() for k in a.params)


def test_init_statistics():
    net = init_params(seed=0)
    w = net.params["enc1.pw.weight"].data
    bound = np.sqrt(6 / w.shape[1])
    assert np.abs(w).max() <= bound
    assert np.var(w) == pytest.approx(bound ** 2 / 3, rel=0.05)
    assert not net.params["enc1.pw.bias"].data.any()


def test_config_validation():
    with pytest.raises(ConfigError):
        NetworkConfig((8, 16), axial_k=4)
    with pytest.raises(ConfigError):
        NetworkConfig((4,), ca_reduction=8)
    with pytest.raises(ConfigError):
        NetworkConfig(())
    with pytest.raises(ConfigError):
        NetworkConfig(activation="swish")


# counters

def test_pointwise_layer_count():
    # one pointwise 32 -> 64 with bias
    assert 32 * 64 + 64 == 2112
    cfg = NetworkConfig((32, 64), ca_reduction=8)
    assert parameter_shapes(cfg)["enc1.pw.weight"] == (64, 32)
    rows = {r["name"]: r for r in layer_table(init_params(cfg), (128, 128))}
    assert rows["enc1.pw.weight"]["params"] + rows["enc1.pw.bias"]["params"] == 2112
    # enc1 runs at half resolution, so a 256x256 input puts it at 128x128
    rows = {r["name"]: r for r in layer_table(init_params(cfg), (256, 256))}
    assert 2 * rows["enc1.pw.weight"]["macs"] == 2 * 32 * 64 * 128 * 128
    assert rows["enc1.pw.bias"]["macs"] == 0


def test_param_count_additivity():
    net = init_params()
    assert count_params(net) == sum(a.size for a in network_tensors(net).values())
    assert sum(r["params"] for r in layer_table(net, (256, 256))) == count_params(net)


def test_flops_scale_with_area():
    net = init_params()
    assert count_flops(net, (512, 512)) == 4 * count_flops(net, (256, 256))
    assert count_flops(net, (256, 256)) == 2 * count_macs(net, (256, 256))
    assert count_flops(net, (256, 256), ops_per_mac=1) == count_macs(net, (256, 256))


def test_default_budget():
    net = init_params(NetworkConfig(DEFAULT_WIDTHS))
    assert count_params(net) == 173845
