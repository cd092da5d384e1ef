"""Tensor/layer forward contracts, backward vs finite differences, Adam."""

import numpy as np
import pytest

from mmrlab.autodiff import Tensor, no_grad
from mmrlab.layers import (
    Activation, Adam, Conv2d, ConvTranspose2d, Dense, Flatten, GradientError,
    Reshape, Sequential, ShapeError, Softmax,
)

from helpers import check_gradients, numerical_gradient, max_rel_error


def _rng(seed):
    return np.random.default_rng(seed)


class TestForwardContracts:
    def test_dense_identity(self):
        layer = Dense(3, 3)
        layer.weight.data = np.eye(3)
        out = layer(Tensor([[1.0, 2.0, 3.0]]))
        assert np.allclose(out.data, [[1.0, 2.0, 3.0]])

    def test_conv_shape_arithmetic(self):
        conv = Conv2d(1, 8, kernel_size=5, stride=2, padding=2, rng=_rng(0))
        x = Tensor(_rng(1).normal(size=(3, 1, 16, 32)))
        assert conv(x).shape == (3, 8, 8, 16)
        assert conv.output_shape((1, 16, 32)) == (8, 8, 16)

    def test_softmax_symmetry(self):
        out = Softmax()(Tensor([[0.0, 0.0]]))
        assert np.allclose(out.data, [[0.5, 0.5]])

    def test_softmax_rows_normalized(self):
        x = Tensor(_rng(2).normal(scale=5.0, size=(40, 2)))
        p = x.softmax()
        assert np.all(p.data > 0) and np.all(p.data < 1)
        assert np.max(np.abs(p.data.sum(axis=1) - 1.0)) < 1e-9

    def test_dense_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError, match="dense"):
            Dense(4, 2)(Tensor(np.zeros((5, 3))))

    def test_conv_channel_mismatch_rejected(self):
        conv = Conv2d(3, 4, kernel_size=3, stride=1, padding=1)
        with pytest.raises(ShapeError, match="conv2d"):
            conv(Tensor(np.zeros((1, 2, 8, 8))))

    def test_forward_deterministic(self):
        conv = Conv2d(1, 4, kernel_size=3, stride=2, padding=1, rng=_rng(3))
        x = Tensor(_rng(4).normal(size=(2, 1, 8, 8)))
        assert np.array_equal(conv(x).data, conv(x).data)

    def test_encoder_decoder_shape_inverse(self):
        # mirrored stride-2 stack halves then restores each spatial dim
        rng = _rng(5)
        enc = Sequential(
            Conv2d(1, 8, 5, stride=2, padding=2, rng=rng),
            Conv2d(8, 16, 5, stride=2, padding=2, rng=rng),
            Conv2d(16, 32, 4, stride=2, padding=1, rng=rng),
        )
        dec = Sequential(
            ConvTranspose2d(32, 16, 4, stride=2, padding=1, rng=rng),
            ConvTranspose2d(16, 8, 5, stride=2, padding=2, output_padding=1, rng=rng),
            ConvTranspose2d(8, 1, 5, stride=2, padding=2, output_padding=1, rng=rng),
        )
        x = Tensor(rng.normal(size=(2, 1, 16, 32)))
        assert dec(enc(x)).shape == x.shape

    def test_flatten_reshape_roundtrip(self):
        x = Tensor(_rng(6).normal(size=(3, 2, 4, 5)))
        flat = Flatten()(x)
        assert flat.shape == (3, 40)
        back = Reshape((2, 4, 5))(flat)
        assert np.array_equal(back.data, x.data)


class TestBackward:
    def test_linear_case(self):
        # loss = sum(w * x) with x fixed -> dloss/dw = x
        x = np.array([1.5, -2.0, 0.5])
        w = Tensor(np.array([0.3, 0.7, -1.2]), requires_grad=True)
        loss = (w * Tensor(x)).sum()
        loss.backward()
        assert np.allclose(w.grad, x)

    def test_softmax_ce_uniform_prediction(self):
        # one-hot target (1,0) at uniform prediction: grad wrt logits = (-0.5, 0.5)
        logits = Tensor(np.array([[0.0, 0.0]]), requires_grad=True)
        p = logits.softmax().clip(1e-12, 1.0)
        target = Tensor(np.array([[1.0, 0.0]]))
        loss = -(target * p.log()).sum(axis=1).mean()
        loss.backward()
        assert np.allclose(logits.grad, [[-0.5, 0.5]], atol=1e-12)

    def test_non_scalar_root_rejected(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x * 2.0).backward()

    def test_off_path_parameter_gets_no_grad(self):
        a = Tensor(np.ones(3), requires_grad=True)
        b = Tensor(np.ones(3), requires_grad=True)
        (a.sum() * 2.0).backward()
        assert np.allclose(a.grad, 2.0)
        assert b.grad is None

    def test_no_grad_skips_graph(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            out = (a * 3.0).sum()
        assert out._backward is None and not out.requires_grad


# one config per layer kind; smooth activations so finite differences are clean
LAYER_CASES = [
    ("dense", lambda rng: Dense(6, 4, rng=rng), (6,)),
    ("conv2d", lambda rng: Conv2d(2, 3, 3, stride=2, padding=1, rng=rng), (2, 6, 8)),
    ("conv2d_k5", lambda rng: Conv2d(1, 2, 5, stride=2, padding=2, rng=rng), (1, 8, 8)),
    ("tconv2d", lambda rng: ConvTranspose2d(3, 2, 4, stride=2, padding=1, rng=rng), (3, 3, 4)),
    ("tconv2d_k5", lambda rng: ConvTranspose2d(2, 1, 5, stride=2, padding=2, output_padding=1, rng=rng), (2, 4, 4)),
    ("sigmoid", lambda rng: Activation("sigmoid"), (10,)),
    ("tanh", lambda rng: Activation("tanh"), (10,)),
    ("softmax", lambda rng: Softmax(), (5,)),
    ("flatten", lambda rng: Flatten(), (2, 3, 4)),
]


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("name,make,in_shape", LAYER_CASES, ids=[c[0] for c in LAYER_CASES])
def test_layer_gradients_match_finite_differences(name, make, in_shape, seed):
    rng = _rng(100 + seed)
    layer = make(rng)
    x = Tensor(rng.normal(size=(2,) + in_shape), requires_grad=True)
    weights = Tensor(rng.normal(size=(2,) + tuple(layer.output_shape(in_shape))))
    params = [x] + layer.parameters()

    def loss_fn():
        return (layer(x) * weights).sum() + ((layer(x) * weights) ** 2).sum() * 0.1

    check_gradients(loss_fn, params, tol=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_relu_gradient_away_from_kink(seed):
    rng = _rng(200 + seed)
    x_data = rng.normal(size=(3, 7))
    x_data[np.abs(x_data) < 1e-3] = 0.5  # keep clear of the nondifferentiable point
    x = Tensor(x_data, requires_grad=True)
    w = Tensor(rng.normal(size=(3, 7)))

    def loss_fn():
        return (x.relu() * w).sum()

    check_gradients(loss_fn, [x], tol=1e-4)


def test_stacked_network_gradients():
    rng = _rng(42)
    net = Sequential(
        Conv2d(1, 2, 3, stride=2, padding=1, rng=rng),
        Activation("tanh"),
        Flatten(),
        Dense(2 * 3 * 4, 5, rng=rng),
        Activation("sigmoid"),
        Dense(5, 2, rng=rng),
    )
    x = Tensor(rng.normal(size=(2, 1, 6, 8)), requires_grad=True)
    target = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))

    def loss_fn():
        p = net(x).softmax().clip(1e-12, 1.0)
        return -(target * p.log()).sum(axis=1).mean()

    check_gradients(loss_fn, [x] + net.parameters(), tol=1e-4)


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam([p])
        p.grad = np.zeros(2)
        before = p.data.copy()
        opt.step()
        assert np.array_equal(p.data, before)

    def test_first_step_magnitude(self):
        # bias-corrected first step with constant g has magnitude ~ lr
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = Adam([p], lr=0.001)
        p.grad = np.array([1.0])
        opt.step()
        assert abs(-p.data[0] - 0.001) < 1e-6

    def test_quadratic_descent(self):
        # minimize 0.5*(p-3)^2: loss decreases monotonically to the optimum
        p = Tensor(np.array([10.0]), requires_grad=True)
        opt = Adam([p], lr=0.05)
        losses = []
        for _ in range(600):
            opt.zero_grad()
            loss = ((p - 3.0) ** 2).sum() * 0.5
            loss.backward()
            losses.append(loss.item())
            opt.step()
        assert losses[-1] < 1e-3
        assert losses[-1] < losses[0]
        diffs = np.diff(np.array(losses[:50]))
        assert np.all(diffs <= 1e-12)

    def test_nan_gradient_aborts(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam([p])
        p.grad = np.array([np.nan])
        with pytest.raises(GradientError, match="non-finite"):
            opt.step()


def test_numerical_gradient_self_check():
    # the oracle itself on a known analytic gradient
    a = np.array([1.0, 2.0, -0.5])
    (g,) = numerical_gradient(lambda: float((a ** 3).sum()), [a])
    assert max_rel_error(g, 3 * a ** 2) < 1e-7
