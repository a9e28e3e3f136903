import math

import numpy as np
import pytest

from bali.linalg import DimensionMismatch, NotPositiveDefinite
from bali.network import (
    LayerSpec,
    activate,
    activate_grad,
    backward_output_grads,
    forward,
    gaussian_nll_grad,
    mlp,
    sigmoid_bce_grad,
    softmax_ce_grad,
    weight_grads,
)
from bali.oracles import gradient_suite


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec(0, 3)
    with pytest.raises(ValueError):
        LayerSpec(2, 3, "sigmoid")
    assert LayerSpec(4, 3).weight_shape == (5, 3)


def test_mlp_last_layer_identity():
    specs = mlp(2, [5, 4], 1, "relu")
    assert [s.activation for s in specs] == ["relu", "relu", "identity"]
    assert [(s.in_dim, s.out_dim) for s in specs] == [(2, 5), (5, 4), (4, 1)]


def test_activation_derivatives():
    z = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(activate_grad("relu", z), [0.0, 0.0, 1.0])
    np.testing.assert_allclose(activate("leaky_tanh", z), np.tanh(z) + 0.1 * z)
    np.testing.assert_allclose(activate_grad("leaky_tanh", z), 1 - np.tanh(z) ** 2 + 0.1)


def test_zero_weights_propagate_zero():
    specs = mlp(3, [4, 2], 2, "tanh")
    weights = [np.zeros(s.weight_shape) for s in specs]
    trace = forward(specs, weights, np.ones((5, 3)))
    for z in trace.zs:
        np.testing.assert_array_equal(z, 0.0)
    for l in (1, 2):
        d = specs[l - 1].out_dim
        expected = np.r_[np.zeros(d), 1.0] / math.sqrt(d + 1)
        np.testing.assert_allclose(trace.xs[l], np.tile(expected, (5, 1)))


def test_first_layer_sees_raw_inputs():
    # Inputs enter the first layer unscaled; only hidden features are rescaled.
    specs = [LayerSpec(3, 3, "identity")]
    W = np.vstack([np.eye(3), np.zeros((1, 3))])
    X = np.arange(6.0).reshape(2, 3)
    trace = forward(specs, [W], X)
    np.testing.assert_array_equal(trace.output, X)
    np.testing.assert_array_equal(trace.xs[0][:, -1], 1.0)


def test_forward_matches_scalar_loops(gen):
    specs = mlp(2, [3], 2, "tanh")
    W1, W2 = (gen.standard_normal(s.weight_shape) for s in specs)
    X = gen.standard_normal((3, 2))
    trace = forward(specs, [W1, W2], X)
    for n in range(3):
        x1 = [X[n, 0], X[n, 1], 1.0]
        z1 = [sum(x1[i] * W1[i, j] for i in range(3)) for j in range(3)]
        x2 = [math.tanh(v) / 2.0 for v in z1] + [1 / 2.0]
        z2 = [sum(x2[i] * W2[i, j] for i in range(4)) for j in range(2)]
        np.testing.assert_allclose(trace.zs[0][n], z1, rtol=1e-13)
        np.testing.assert_allclose(trace.output[n], z2, rtol=1e-13)


def test_forward_is_bitwise_deterministic(gen):
    specs = mlp(3, [8, 8], 2, "tanh")
    weights = [gen.standard_normal(s.weight_shape) for s in specs]
    X = gen.standard_normal((4, 3))
    a, b = forward(specs, weights, X), forward(specs, weights, X)
    for u, v in zip(a.zs, b.zs):
        assert np.array_equal(u, v)


def test_forward_shape_and_finiteness_errors():
    specs = mlp(2, [3], 1)
    weights = [np.zeros(s.weight_shape) for s in specs]
    with pytest.raises(DimensionMismatch):
        forward(specs, weights, np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        forward(specs, weights[:1], np.ones((2, 2)))
    bad = [np.full(s.weight_shape, np.inf) for s in specs]
    with pytest.raises(FloatingPointError):
        forward(specs, bad, np.ones((2, 2)))


def test_backward_single_identity_layer(gen):
    specs = [LayerSpec(3, 2, "identity")]
    W = gen.standard_normal(specs[0].weight_shape)
    trace = forward(specs, [W], gen.standard_normal((4, 3)))
    g = gen.standard_normal((4, 2))
    np.testing.assert_array_equal(backward_output_grads(specs, [W], trace, g)[0], g)


def test_backward_zero_gradient(gen):
    specs = mlp(3, [4, 4], 2, "tanh")
    weights = [gen.standard_normal(s.weight_shape) for s in specs]
    trace = forward(specs, weights, gen.standard_normal((2, 3)))
    for g in backward_output_grads(specs, weights, trace, np.zeros((2, 2))):
        np.testing.assert_array_equal(g, 0.0)


def test_backward_against_finite_differences():
    for c in gradient_suite(n_networks=10, seed=3):
        assert c.ok, c


def test_weight_gradient_against_finite_differences(gen):
    specs = mlp(2, [3], 1, "tanh")
    weights = [gen.standard_normal(s.weight_shape) for s in specs]
    X, y = gen.standard_normal((4, 2)), gen.standard_normal((4, 1))
    trace = forward(specs, weights, X)
    _, g = gaussian_nll_grad(trace.output, y, np.eye(1))
    wg = weight_grads(trace, backward_output_grads(specs, weights, trace, g))
    h = 1e-6
    for l in range(2):
        for idx in np.ndindex(*weights[l].shape):
            wp = [w.copy() for w in weights]
            wm = [w.copy() for w in weights]
            wp[l][idx] += h
            wm[l][idx] -= h
            fp = gaussian_nll_grad(forward(specs, wp, X).output, y, np.eye(1))[0]
            fm = gaussian_nll_grad(forward(specs, wm, X).output, y, np.eye(1))[0]
            assert wg[l][idx] == pytest.approx((fp - fm) / (2 * h), rel=1e-5, abs=1e-7)


def test_gaussian_head_residual_free():
    S = np.array([[2.0, 0.3], [0.3, 1.0]])
    z = np.ones((3, 2))
    ll, g = gaussian_nll_grad(z, z, S)
    np.testing.assert_array_equal(g, 0.0)
    assert ll == pytest.approx(-0.5 * 3 * math.log((2 * math.pi) ** 2 * np.linalg.det(S)))


def test_gaussian_head_unit_noise_gradient():
    z, y = np.array([[0.5], [2.0]]), np.array([[1.0], [-1.0]])
    _, g = gaussian_nll_grad(z, y, np.eye(1))
    np.testing.assert_allclose(g, y - z)


def test_gaussian_head_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        gaussian_nll_grad(np.zeros((1, 2)), np.zeros((1, 2)), np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_softmax_uniform_logits():
    _, g = softmax_ce_grad(np.zeros((3, 2)), [0, 1, 1])
    np.testing.assert_allclose(np.abs(g), 0.5)
    np.testing.assert_allclose(g[np.arange(3), [0, 1, 1]], 0.5)


def test_softmax_saturation():
    z = np.array([[800.0, 0.0, 0.0]])
    ll, g = softmax_ce_grad(z, [0])
    assert ll == pytest.approx(0.0)
    np.testing.assert_allclose(g, 0.0, atol=1e-300)


def test_softmax_invalid_labels():
    with pytest.raises(ValueError):
        softmax_ce_grad(np.zeros((2, 3)), [0, 3])
    with pytest.raises(ValueError):
        softmax_ce_grad(np.zeros((2, 3)), [0.5, 1])


def test_sigmoid_head_values():
    ll, g = sigmoid_bce_grad(np.zeros((2, 1)), [0, 1])
    assert ll == pytest.approx(2 * math.log(0.5))
    np.testing.assert_allclose(g[:, 0], [-0.5, 0.5])
    with pytest.raises(ValueError):
        sigmoid_bce_grad(np.zeros((1, 1)), [2])
    with pytest.raises(DimensionMismatch):
        sigmoid_bce_grad(np.zeros((1, 2)), [1])


def test_dropout_masks_enter_forward_and_backward(gen):
    specs = mlp(2, [4], 1, "tanh")
    weights = [gen.standard_normal(s.weight_shape) for s in specs]
    X = gen.standard_normal((3, 2))
    mask = [np.array([[2.0, 0.0, 2.0, 0.0]] * 3)]
    trace = forward(specs, weights, X, mask)
    h = np.tanh(trace.zs[0]) * mask[0]
    np.testing.assert_allclose(trace.xs[1][:, :4], h / math.sqrt(5))
    g = backward_output_grads(specs, weights, trace, np.ones((3, 1)), mask)[0]
    np.testing.assert_array_equal(g[:, [1, 3]], 0.0)
