import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import hand_net, kink_free_net
from fdfa.core import RngStream, ShapeError
from fdfa.network import (
    MlpSpec,
    PerturbationDraw,
    activate_prime,
    activation_gradients,
    backprop,
    forward,
    forward_with_tangent,
    kaiming_uniform_init,
    loss_and_error,
    mean_loss,
    predict,
    zeros_init,
)


def numeric_gradient(net, x, target, step=1e-6):
    grads = []
    for w in net.weights:
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + step
            up = loss_and_error(forward(net, x).output, target)[0]
            w[idx] = old - step
            down = loss_and_error(forward(net, x).output, target)[0]
            w[idx] = old
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def output_jacobians(net, x):
    """Exact d y_L[k] / d W^(l) and d y_L[k] / d y^(l) by reverse accumulation per output."""
    trace = forward(net, x)
    n_out = net.spec.widths[-1]
    dW, dY = [], []
    for k in range(n_out):
        onehot = np.eye(n_out)[k]
        act = activation_gradients(net, trace, onehot)
        dY.append(act)
        rows = []
        for l in range(1, net.depth + 1):
            s = activate_prime(net.spec.activation(l), trace.pre[l - 1])
            rows.append(np.multiply.outer(act[l - 1] * s, trace.post[l - 1]))
        dW.append(rows)
    return dW, dY


class TestInit:
    def test_bound_for_fan_in_six(self):
        net = kaiming_uniform_init(MlpSpec((6, 50)), RngStream(0))
        assert np.all(np.abs(net.weights[0]) <= 1.0)
        assert np.abs(net.weights[0]).max() > 0.95

    def test_mean_is_zero(self):
        net = kaiming_uniform_init(MlpSpec((6, 100_000), "relu"), RngStream(1))
        w = net.weights[0].ravel()[:100_000]
        # U(-1, 1) has standard deviation 1/sqrt(3)
        assert abs(w.mean()) < 3 / math.sqrt(3) / math.sqrt(w.size)

    def test_same_seed_same_weights(self):
        spec = MlpSpec((5, 4, 3))
        a = kaiming_uniform_init(spec, RngStream(9))
        b = kaiming_uniform_init(spec, RngStream(9))
        assert all(np.array_equal(u, v) for u, v in zip(a.weights, b.weights))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            MlpSpec((3,))
        with pytest.raises(ValueError):
            MlpSpec((3, 0, 2))
        with pytest.raises(ValueError):
            MlpSpec((3, 2), "sigmoidish")

    def test_wrong_weight_shape(self):
        with pytest.raises(ShapeError):
            hand_net([np.ones((2, 3)), np.ones((2, 3))])


class TestForward:
    def test_identity_network(self):
        net = hand_net([np.eye(3)], "identity")
        x = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(forward(net, x).post[1], x)

    def test_relu(self):
        net = hand_net([np.eye(2), np.eye(2)])
        trace = forward(net, np.array([-1.0, 2.0]))
        assert np.array_equal(trace.post[1], [0.0, 2.0])

    def test_two_layer_by_hand(self):
        net = hand_net([[[1, -1], [2, 0.5]], [[1, 1], [0, -2]]])
        trace = forward(net, np.array([1.0, 2.0]))
        # a1 = (-1, 3), y1 = (0, 3), y2 = (3, -6)
        assert np.array_equal(trace.pre[0], [-1, 3])
        assert np.array_equal(trace.output, [3, -6])

    def test_input_length_checked(self):
        net = hand_net([np.eye(2)])
        with pytest.raises(ShapeError):
            forward(net, np.ones(3))

    def test_deterministic(self, deep_net):
        net, x = deep_net
        a, b = forward(net, x), forward(net, x)
        assert all(np.array_equal(u, v) for u, v in zip(a.post, b.post))

    @given(st.floats(-5, 5))
    def test_identity_activations_are_linear(self, alpha):
        net = kaiming_uniform_init(MlpSpec((4, 3, 2), "identity"), RngStream(3))
        x = RngStream(4).normal(4)
        np.testing.assert_allclose(forward(net, alpha * x).output, alpha * forward(net, x).output,
                                   rtol=1e-12, atol=1e-12)

    def test_batched_predict_matches_forward(self, deep_net):
        net, _ = deep_net
        xs = RngStream(5).normal((7, 5))
        expected = [int(np.argmax(forward(net, x).output)) for x in xs]
        assert list(predict(net, xs)) == expected

    def test_mean_loss_matches_per_sample(self, deep_net):
        net, _ = deep_net
        xs = RngStream(6).normal((5, 5))
        labels = [0, 1, 2, 1, 0]
        per = [loss_and_error(forward(net, x).output, t)[0] for x, t in zip(xs, labels)]
        assert mean_loss(net, xs, labels) == pytest.approx(np.mean(per), rel=1e-12)


class TestTangent:
    def test_zero_perturbation_gives_zero_tangent(self, deep_net):
        net, x = deep_net
        draw = PerturbationDraw("weight", weight=[np.zeros_like(w) for w in net.weights])
        _, tan = forward_with_tangent(net, x, draw)
        assert np.array_equal(tan.output, np.zeros(3))

    def test_one_one_one_chain_rule(self):
        net = hand_net([[[0.7]], [[-1.3]]], "identity")
        draw = PerturbationDraw("weight", weight=[np.array([[1.0]]), np.zeros((1, 1))])
        _, tan = forward_with_tangent(net, np.array([2.0]), draw)
        assert tan.output[0] == pytest.approx(-1.3 * (1.0 * 2.0))

    def test_activity_basis_vector_gives_jacobian_column(self, small_net):
        net, x = small_net
        _, dY = output_jacobians(net, x)
        jac = np.stack([rows[0] for rows in dY])  # (n_L, n_1)
        for i in range(net.spec.widths[1]):
            draw = PerturbationDraw("activity", activity=[np.eye(net.spec.widths[1])[i]])
            _, tan = forward_with_tangent(net, x, draw)
            np.testing.assert_allclose(tan.output, jac[:, i], rtol=1e-12, atol=1e-15)

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_weight_jvp_identity(self, seed):
        net, x = kink_free_net((5, 4, 4, 3), seed)
        rng = RngStream(seed, 99)
        vs = [rng.normal(w.shape) for w in net.weights]
        _, tan = forward_with_tangent(net, x, PerturbationDraw("weight", weight=vs))
        dW, _ = output_jacobians(net, x)
        expected = np.array([sum(np.sum(j * v) for j, v in zip(rows, vs)) for rows in dW])
        np.testing.assert_allclose(tan.output, expected, rtol=1e-8, atol=1e-12)

    @pytest.mark.parametrize("seed", [4, 5, 6])
    def test_activity_jvp_identity(self, seed):
        net, x = kink_free_net((5, 4, 4, 3), seed)
        rng = RngStream(seed, 98)
        vs = [rng.normal(net.spec.widths[l]) for l in (1, 2)]
        _, tan = forward_with_tangent(net, x, PerturbationDraw("activity", activity=vs))
        _, dY = output_jacobians(net, x)
        expected = np.array([sum(act[l] @ vs[l] for l in range(2)) for act in dY])
        np.testing.assert_allclose(tan.output, expected, rtol=1e-8, atol=1e-12)

    def test_output_activity_flag(self, small_net):
        net, x = small_net
        v_out = np.array([0.3, -0.2])
        draw = PerturbationDraw("activity", activity=[np.zeros(3), v_out], perturb_output=True)
        _, tan = forward_with_tangent(net, x, draw)
        np.testing.assert_allclose(tan.output, v_out)

    def test_draw_shape_validated(self, small_net):
        net, x = small_net
        with pytest.raises(ShapeError):
            forward_with_tangent(net, x, PerturbationDraw("activity", activity=[np.zeros(4)]))
        with pytest.raises(ShapeError):
            forward_with_tangent(net, x, PerturbationDraw("weight", weight=[np.zeros((3, 4))]))


class TestLoss:
    def test_saturated_correct_output(self):
        loss, e = loss_and_error(np.array([0.0, 50.0, 0.0]), 1)
        assert loss == pytest.approx(0.0, abs=1e-20)
        assert np.max(np.abs(e)) < 1e-20

    def test_uniform_four(self):
        loss, e = loss_and_error(np.zeros(4), 2)
        assert loss == pytest.approx(math.log(4))
        np.testing.assert_allclose(e, [0.25, 0.25, -0.75, 0.25])

    def test_no_overflow(self):
        loss, e = loss_and_error(np.array([1000.0, 0.0]), 1)
        assert loss == pytest.approx(1000.0)
        assert np.all(np.isfinite(e))

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            loss_and_error(np.zeros(3), 3)


class TestBackprop:
    @pytest.mark.parametrize("widths,seed", [((4, 3, 2), 1), ((5, 4, 4, 3), 2), ((3, 6, 2, 4), 3)])
    def test_matches_central_differences(self, widths, seed):
        net, x = kink_free_net(widths, seed)
        target = seed % widths[-1]
        est = backprop(net, x, target)
        for g, n in zip(est.grads, numeric_gradient(net, x, target)):
            scale = np.maximum(np.abs(n), 1e-3)
            assert np.max(np.abs(g - n) / scale) < 1e-5

    def test_zero_weights_uniform_softmax(self):
        net = zeros_init(MlpSpec((3, 4, 2)))
        est = backprop(net, np.ones(3), 0)
        np.testing.assert_allclose(est.error, [-0.5, 0.5])

    def test_uniform_loss_ten_classes(self):
        net = zeros_init(MlpSpec((3, 4, 10)))
        assert backprop(net, np.ones(3), 7).loss == pytest.approx(2.302585, abs=1e-6)

    def test_relu_derivative_at_zero(self):
        # a zero-initialised layer must still pass gradient (see activate_prime)
        assert activate_prime("relu", np.array([-1e-300, 0.0, 1e-300])).tolist() == [0.0, 1.0, 1.0]

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_gradient_shapes(self, seed):
        net = kaiming_uniform_init(MlpSpec((3, 5, 2)), RngStream(seed))
        est = backprop(net, RngStream(seed, 1).normal(3), 1)
        assert [g.shape for g in est.grads] == [w.shape for w in net.weights]
