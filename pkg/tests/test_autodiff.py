"""Reverse-mode tape: hand-computed derivatives and finite-difference oracles."""
import numpy as np
import pytest

from m4d import autodiff as ad
from helpers import gradcheck, rel_err, tape_grad


def test_add_mul_hand_gradients():
    with ad.Tape() as tape:
        a = ad.parameter([2.0, 3.0])
        b = ad.parameter([4.0, 5.0])
        loss = ad.tensor_sum(ad.mul(ad.add(a, b), a))  # sum(a^2 + ab)
        tape.backward(loss)
    np.testing.assert_allclose(a.grad, [2 * 2 + 4, 2 * 3 + 5])
    np.testing.assert_allclose(b.grad, [2.0, 3.0])


def test_matmul_hand_gradient():
    x = np.array([[1.0, 2.0]])
    w = np.array([[3.0], [4.0]])
    with ad.Tape() as tape:
        xt, wt = ad.parameter(x), ad.parameter(w)
        tape.backward(ad.tensor_sum(ad.matmul(xt, wt)))
    np.testing.assert_allclose(xt.grad, w.T)
    np.testing.assert_allclose(wt.grad, x.T)


def test_broadcast_gradients_sum_over_expanded_axes():
    with ad.Tape() as tape:
        a = ad.parameter(np.ones((3, 2)))
        b = ad.parameter(np.array([10.0, 20.0]))  # broadcast over rows
        tape.backward(ad.tensor_sum(ad.mul(a, b)))
    np.testing.assert_allclose(a.grad, np.tile([10.0, 20.0], (3, 1)))
    np.testing.assert_allclose(b.grad, [3.0, 3.0])


def test_silu_value():
    with ad.Tape():
        y = ad.silu(ad.constant([1.0]))
    assert abs(y.data[0] - 1.0 / (1.0 + np.exp(-1.0))) < 1e-12


def test_softplus_and_sigmoid_consistency():
    x = np.linspace(-4, 4, 9)
    with ad.Tape():
        sp = ad.softplus(ad.constant(x)).data
        sg = ad.sigmoid(ad.constant(x)).data
    np.testing.assert_allclose(sp, np.log1p(np.exp(x)), atol=1e-12)
    np.testing.assert_allclose(sg, 1 / (1 + np.exp(-x)), atol=1e-12)


def test_max_gradient_splits_ties_evenly():
    with ad.Tape() as tape:
        x = ad.parameter([[1.0, 3.0, 3.0]])
        tape.backward(ad.tensor_sum(ad.tensor_max(x, axis=1)))
    np.testing.assert_allclose(x.grad, [[0.0, 0.5, 0.5]])


def test_layer_norm_two_point_row():
    # Row [1, 3]: mean 2, variance 1, so outputs are ±1/sqrt(1 + eps).
    with ad.Tape():
        out = ad.layer_norm(ad.constant([[1.0, 3.0]]),
                            ad.constant(np.ones(2)), ad.constant(np.zeros(2)))
    expect = 1.0 / np.sqrt(1.0 + ad.LAYER_NORM_EPS)
    np.testing.assert_allclose(out.data, [[-expect, expect]], atol=1e-12)


def test_layer_norm_constant_row_returns_beta():
    beta = np.array([0.5, -0.25, 7.0])
    with ad.Tape():
        out = ad.layer_norm(ad.constant(np.full((2, 3), 4.0)),
                            ad.constant(np.ones(3)), ad.constant(beta))
    np.testing.assert_allclose(out.data, np.tile(beta, (2, 1)), atol=1e-3)


def test_depthwise_conv_hand_example():
    # Kernel [1, 1] over [1, 2, 3] with causal zero padding: [1, 3, 5].
    x = np.array([[1.0], [2.0], [3.0]])
    k = np.array([[1.0], [1.0]])
    with ad.Tape():
        y = ad.depthwise_conv1d(ad.constant(x), ad.constant(k))
    np.testing.assert_allclose(y.data, [[1.0], [3.0], [5.0]])


def test_depthwise_conv_identity_tap():
    # A delta at the last tap reproduces the input exactly.
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 3))
    k = np.zeros((4, 3))
    k[-1] = 1.0
    with ad.Tape():
        y = ad.depthwise_conv1d(ad.constant(x), ad.constant(k))
    np.testing.assert_array_equal(y.data, x)


def test_depthwise_conv_is_causal():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(8, 2))
    k = rng.normal(size=(4, 2))
    with ad.Tape():
        base = ad.depthwise_conv1d(ad.constant(x), ad.constant(k)).data.copy()
    x2 = x.copy()
    x2[5:] += 100.0  # only future positions change
    with ad.Tape():
        pert = ad.depthwise_conv1d(ad.constant(x2), ad.constant(k)).data
    np.testing.assert_array_equal(pert[:5], base[:5])


def test_gather_seq_values_and_gradient():
    x = np.arange(12.0).reshape(4, 3)
    idx = np.array([2, 0, 2])
    with ad.Tape() as tape:
        xt = ad.parameter(x)
        out = ad.gather_seq(xt, ad.constant(idx))
        np.testing.assert_array_equal(out.data, x[idx])
        tape.backward(ad.tensor_sum(out))
    expect = np.zeros_like(x)
    np.add.at(expect, idx, 1.0)
    np.testing.assert_array_equal(xt.grad, expect)


def test_detach_blocks_gradient():
    with ad.Tape() as tape:
        x = ad.parameter([2.0])
        tape.backward(ad.tensor_sum(ad.mul(ad.detach(x), x)))
    np.testing.assert_allclose(x.grad, [2.0])  # only the live branch contributes


def test_backward_requires_scalar_loss():
    with ad.Tape() as tape:
        x = ad.parameter([1.0, 2.0])
        y = ad.mul(x, x)
        with pytest.raises(ValueError):
            tape.backward(y)


@pytest.mark.parametrize("name,op", [
    ("exp", ad.exp),
    ("log", lambda t: ad.log(ad.add(ad.mul(t, t), ad.constant(1.5)))),
    ("sigmoid", ad.sigmoid),
    ("silu", ad.silu),
    ("softplus", ad.softplus),
    ("max", lambda t: ad.tensor_max(t, axis=1)),
    ("mean", lambda t: ad.mean(t, axis=0)),
    ("reshape", lambda t: ad.reshape(ad.mul(t, t), (6,))),
    ("slice", lambda t: ad.slice_axis(ad.silu(t), 0, 1, 3)),
    ("pad", lambda t: ad.mul(ad.pad_axis(t, 0, 1, 2), ad.pad_axis(t, 0, 1, 2))),
])
def test_primitive_gradients_match_finite_differences(name, op):
    rng = np.random.default_rng(hash(name) % 2**32)
    x = rng.normal(size=(3, 2)) * 0.7 + 0.1
    gradcheck(op, x, tol=1e-6)


def test_layer_norm_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 6))
    gamma = rng.normal(size=6)
    beta = rng.normal(size=6)
    gradcheck(lambda t: ad.layer_norm(t, ad.constant(gamma), ad.constant(beta)),
              x, tol=1e-6)
    gradcheck(lambda g: ad.layer_norm(ad.constant(x), g, ad.constant(beta)),
              gamma, tol=1e-6)


def test_depthwise_conv_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(7, 3))
    k = rng.normal(size=(4, 3))
    gradcheck(lambda t: ad.depthwise_conv1d(t, ad.constant(k)), x, tol=1e-6)
    gradcheck(lambda t: ad.depthwise_conv1d(ad.constant(x), t), k, tol=1e-6)


def test_randomized_composite_gradients():
    rng = np.random.default_rng(9)
    for trial in range(20):
        x = rng.normal(size=(rng.integers(2, 5), rng.integers(2, 5)))

        def op(t):
            h = ad.silu(t)
            h = ad.add(ad.mul(h, ad.sigmoid(t)), ad.exp(ad.mul(t, ad.constant(0.3 * np.ones(1)))))
            return ad.tensor_max(h, axis=1)

        gradcheck(op, x, tol=1e-5)


def test_two_tapes_are_independent():
    with ad.Tape() as outer:
        x = ad.parameter([3.0])
        with ad.Tape() as inner:
            y = ad.parameter([5.0])
            inner.backward(ad.tensor_sum(ad.mul(y, y)))
        outer.backward(ad.tensor_sum(ad.mul(x, x)))
    np.testing.assert_allclose(y.grad, [10.0])
    np.testing.assert_allclose(x.grad, [6.0])
