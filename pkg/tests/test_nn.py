"""Neural-engine oracles: closed-form convolutions, exact losses, gradient
checks per layer kind, serialization round trips, optimizer determinism."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chainrep.nn import (
    Adam,
    BCELoss,
    Conv1D,
    Dense,
    Flatten,
    LossModel,
    MSELoss,
    Network,
    ReLU,
    Reshape,
    SGD,
    ShapeMismatch,
    Sigmoid,
    Tanh,
    Upsample1D,
    gradient_check,
    load_model,
    save_model,
)


def rng(seed=0):
    return np.random.default_rng(seed)


# -- closed-form forward oracles ---------------------------------------------


def test_conv1d_hand_computed_same_padding():
    # kernel [1, 1, 1], stride 1, padding 1 over signal [1, 2, 3]:
    # windows (0,1,2), (1,2,3), (2,3,0) -> [3, 6, 5]
    conv = Conv1D(1, 1, kernel_size=3, rng=rng(), stride=1, padding=1)
    conv.W[:] = 1.0
    conv.b[:] = 0.0
    x = np.array([[[1.0], [2.0], [3.0]]])
    out = conv.forward(x)
    assert out.shape == (1, 3, 1)
    np.testing.assert_allclose(out[0, :, 0], [3.0, 6.0, 5.0], rtol=0, atol=0)


def test_conv1d_stride_two_downsamples():
    conv = Conv1D(1, 1, kernel_size=3, rng=rng(), stride=2, padding=1)
    conv.W[:, 0, 0] = [1.0, 10.0, 100.0]
    conv.b[:] = 0.5
    x = np.arange(1.0, 5.0).reshape(1, 4, 1)  # [1,2,3,4]
    out = conv.forward(x)
    # windows at padded positions: (0,1,2) and (2,3,4)
    np.testing.assert_allclose(out[0, :, 0], [0 + 10 + 200 + 0.5, 2 + 30 + 400 + 0.5])


def test_conv1d_output_length_formula():
    conv = Conv1D(2, 3, kernel_size=3, rng=rng(), stride=2, padding=1)
    assert conv.output_length(24) == 12
    assert conv.output_length(12) == 6
    out = conv.forward(np.zeros((5, 24, 2)))
    assert out.shape == (5, 12, 3)


@given(
    length=st.integers(1, 40),
    kernel=st.integers(1, 5),
    stride=st.integers(1, 4),
    padding=st.integers(0, 3),
)
@settings(max_examples=60, deadline=None)
def test_conv1d_length_matches_formula(length, kernel, stride, padding):
    expected = (length + 2 * padding - kernel) // stride + 1
    if expected < 1:
        return
    conv = Conv1D(1, 1, kernel_size=kernel, rng=rng(1), stride=stride, padding=padding)
    out = conv.forward(np.zeros((2, length, 1)))
    assert out.shape == (2, expected, 1)


def test_dense_is_affine():
    layer = Dense(3, 2, rng=rng(3))
    layer.W[:] = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    layer.b[:] = [10.0, 20.0]
    out = layer.forward(np.array([[1.0, 2.0, 3.0]]))
    np.testing.assert_allclose(out, [[14.0, 25.0]])


def test_upsample_repeats_and_backward_sums():
    up = Upsample1D(2)
    x = np.array([[[1.0], [2.0]]])
    np.testing.assert_array_equal(up.forward(x)[0, :, 0], [1.0, 1.0, 2.0, 2.0])
    grad = up.backward(np.array([[[0.1], [0.2], [0.3], [0.4]]]))
    np.testing.assert_allclose(grad[0, :, 0], [0.3, 0.7])


# -- loss oracles -------------------------------------------------------------


def test_mse_closed_form_exact():
    loss = MSELoss()
    pred = np.array([[1.0, 2.0], [3.0, 4.0]])
    target = np.array([[1.0, 0.0], [0.0, 4.0]])
    # squared errors: 0, 4, 9, 0 -> mean 13/4
    assert abs(loss.value(pred, target) - 13.0 / 4.0) < 1e-12
    np.testing.assert_allclose(
        loss.grad(pred, target), np.array([[0.0, 2.0], [3.0, 0.0]]) * 2.0 / 4.0, atol=1e-15
    )


def test_mse_gradient_of_scalar_model():
    # f(w) = (w*x - t)^2 has df/dw = 2x(wx - t); check the loss grad chains to it.
    x, w, t = 3.0, 0.7, 2.0
    loss = MSELoss()
    pred = np.array([[w * x]])
    dw_analytic = loss.grad(pred, np.array([[t]])).item() * x
    assert abs(dw_analytic - 2.0 * x * (w * x - t)) < 1e-12


def test_bce_matches_manual_value():
    loss = BCELoss()
    pred = np.array([0.9, 0.2])
    target = np.array([1.0, 0.0])
    manual = -(np.log(0.9) + np.log(0.8)) / 2.0
    assert abs(loss.value(pred, target) - manual) < 1e-12


def test_bce_clip_keeps_loss_finite():
    loss = BCELoss()
    value = loss.value(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert np.isfinite(value)
    grad = loss.grad(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    np.testing.assert_array_equal(grad, 0.0)


# -- gradient checks -----------------------------------------------------------


def _check(network, x, target, loss=None, tol=1e-4):
    result = gradient_check(LossModel(network, loss or MSELoss(), x, target))
    assert result.max_rel_error < tol, f"max rel error {result.max_rel_error}"
    return result


def test_gradcheck_dense_linear_is_machine_precision():
    net = Network([Dense(4, 3, rng=rng(1)), Dense(3, 2, rng=rng(2))])
    _check(net, rng(3).normal(size=(5, 4)), rng(4).normal(size=(5, 2)), tol=1e-7)


def test_gradcheck_dense_relu_sigmoid():
    net = Network([Dense(4, 8, rng=rng(1)), ReLU(), Dense(8, 1, rng=rng(2)), Sigmoid()])
    x = rng(3).normal(size=(6, 4))
    target = rng(4).uniform(0.2, 0.8, size=(6, 1))
    _check(net, x, target, loss=BCELoss())


def test_gradcheck_tanh():
    net = Network([Dense(3, 5, rng=rng(1)), Tanh(), Dense(5, 2, rng=rng(2))])
    _check(net, rng(3).normal(size=(4, 3)), rng(4).normal(size=(4, 2)))


def test_gradcheck_conv_stack():
    net = Network(
        [
            Conv1D(2, 3, kernel_size=3, rng=rng(1), stride=2, padding=1),
            ReLU(),
            Conv1D(3, 2, kernel_size=3, rng=rng(2), stride=1, padding=1),
            Flatten(),
            Dense(2 * 4, 3, rng=rng(3)),
        ]
    )
    _check(net, rng(4).normal(size=(3, 8, 2)), rng(5).normal(size=(3, 3)))


def test_gradcheck_upsample_reshape_path():
    net = Network(
        [
            Dense(6, 8, rng=rng(1)),
            Reshape((4, 2)),
            Upsample1D(2),
            Conv1D(2, 1, kernel_size=3, rng=rng(2), padding=1),
            Flatten(),
        ]
    )
    _check(net, rng(3).normal(size=(4, 6)), rng(4).normal(size=(4, 8)))


def test_gradcheck_catches_a_corrupted_backward():
    class BrokenReLU(ReLU):
        def backward(self, grad_out):
            return super().backward(grad_out) * 1.01  # deliberately wrong by 1%

    net = Network([Dense(3, 4, rng=rng(1)), BrokenReLU(), Dense(4, 2, rng=rng(2))])
    x = rng(3).normal(size=(5, 3))
    result = gradient_check(LossModel(net, MSELoss(), x, rng(4).normal(size=(5, 2))))
    assert result.max_rel_error > 1e-3


# -- plumbing ------------------------------------------------------------------


def test_backward_before_forward_raises():
    layer = Dense(2, 2, rng=rng(0))
    with pytest.raises(RuntimeError, match="backward called before forward"):
        layer.backward(np.zeros((1, 2)))


def test_shape_mismatch_names_the_layer():
    net = Network([Dense(3, 2, rng=rng(0)), Dense(2, 1, rng=rng(1))])
    with pytest.raises(ShapeMismatch, match="layer 0"):
        net.forward(np.zeros((1, 4)))


def test_non_finite_input_rejected():
    net = Network([Dense(2, 2, rng=rng(0))])
    with pytest.raises(ValueError, match="NaN or Inf"):
        net.forward(np.array([[1.0, np.nan]]))


def test_network_num_params():
    net = Network([Dense(3, 4, rng=rng(0)), Dense(4, 2, rng=rng(1), bias=False)])
    assert net.num_params() == (3 * 4 + 4) + (4 * 2)


# -- optimizers ----------------------------------------------------------------


def _train_quadratic(opt_cls, steps=200, **kw):
    # minimize ||W x - t||^2 for fixed x, t
    net = Network([Dense(2, 2, rng=rng(5))])
    x = np.array([[1.0, -1.0], [0.5, 2.0]])
    t = np.array([[2.0, 0.0], [0.0, 1.0]])
    loss = MSELoss()
    opt = opt_cls(net, **kw)
    values = []
    for _ in range(steps):
        out = net.forward(x)
        values.append(loss.value(out, t))
        net.backward(loss.grad(out, t))
        opt.step()
    return values


def test_sgd_descends():
    values = _train_quadratic(SGD, lr=0.05)
    assert values[-1] < 1e-6
    assert values[-1] < values[0]


def test_adam_descends():
    values = _train_quadratic(Adam, lr=0.05)
    assert values[-1] < 1e-6


def test_adam_is_deterministic():
    a = _train_quadratic(Adam, lr=0.01)
    b = _train_quadratic(Adam, lr=0.01)
    assert a == b  # identical float trajectories, not just close


# -- serialization ---------------------------------------------------------------


def test_serialization_round_trip(tmp_path):
    net = Network(
        [
            Conv1D(2, 4, kernel_size=3, rng=rng(1), stride=2, padding=1),
            ReLU(),
            Flatten(),
            Dense(4 * 4, 6, rng=rng(2)),
            Tanh(),
            Dense(6, 8, rng=rng(3)),
            Reshape((4, 2)),
            Upsample1D(2),
            Sigmoid(),
        ]
    )
    x = rng(4).normal(size=(3, 8, 2))
    expected = net.forward(x)
    path = tmp_path / "model.nn"
    save_model(net, path, meta={"purpose": "test"})
    loaded, meta = load_model(path)
    assert meta["purpose"] == "test"
    np.testing.assert_array_equal(loaded.forward(x), expected)  # bit-exact


def test_serialization_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.nn"
    path.write_bytes(b"NOTAMODEL" + b"\x00" * 32)
    with pytest.raises(ValueError, match="magic"):
        load_model(path)


def test_saved_file_is_deterministic(tmp_path):
    def build():
        return Network([Dense(3, 3, rng=rng(9)), Sigmoid()])

    p1, p2 = tmp_path / "a.nn", tmp_path / "b.nn"
    save_model(build(), p1, meta={"k": 1})
    save_model(build(), p2, meta={"k": 1})
    assert p1.read_bytes() == p2.read_bytes()
