import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from semigen import autodiff as ad
from gradcheck import check_gradients, numeric_grad, random_config

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_logsumexp_equal_terms():
    out = ad.logsumexp(ad.constant([0.0, 0.0]), axis=0)
    assert out.item() == pytest.approx(math.log(2), abs=1e-15)


def test_logsumexp_no_overflow():
    out = ad.logsumexp(ad.constant([1000.0, 1000.0]), axis=0)
    assert out.item() == 1000.0 + math.log(2)


def test_relu_values():
    assert ad.relu(ad.constant([-1.0, 2.0])).value.tolist() == [0.0, 2.0]


def test_square_gradient():
    x = ad.parameter(3.0)
    grads = ad.backward(ad.square(x))
    assert grads[x] == pytest.approx(6.0)
    assert x.grad == pytest.approx(6.0)


def test_logsumexp_gradient_is_softmax():
    x = ad.parameter([0.0, 0.0])
    ad.backward(ad.logsumexp(x, axis=0))
    np.testing.assert_allclose(x.grad, [0.5, 0.5])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.floats(-500, 500))
def test_logsumexp_shift_invariance(v, c):
    a = ad.logsumexp(ad.constant(v), axis=0).item()
    b = ad.logsumexp(ad.constant(v + c), axis=0).item()
    assert b - c == pytest.approx(a, abs=1e-9 * max(1.0, abs(c)))
    m = v.max()
    assert a == m + math.log(np.sum(np.exp(v - m)))


def test_backward_twice_is_stale():
    x = ad.parameter(2.0)
    y = ad.square(x)
    ad.backward(y)
    with pytest.raises(ad.StaleGraphError):
        ad.backward(y)


def test_backward_rejects_nonscalar():
    x = ad.parameter([1.0, 2.0])
    with pytest.raises(ad.ShapeError):
        ad.backward(ad.square(x))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))


def test_log_nonpositive_raises():
    with pytest.raises(ValueError):
        ad.log(ad.constant([1.0, 0.0]))


def test_exp_overflow_raises():
    with pytest.raises(FloatingPointError):
        ad.exp(ad.constant([1000.0]))


def test_shared_subexpression_accumulates():
    x = ad.parameter(1.5)
    y = x * x + x
    ad.backward(y)
    assert x.grad == pytest.approx(4.0)


def test_broadcast_bias_gradient_sums_rows():
    b = ad.parameter(np.zeros(3))
    out = ad.sum(ad.constant(np.ones((4, 3))) + b)
    ad.backward(out)
    np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])


@pytest.mark.parametrize("op", ["relu", "sigmoid", "softplus", "exp", "square", "neg"])
def test_unary_primitive_gradients(op):
    rng = np.random.default_rng(1)
    x = ad.parameter(rng.uniform(0.2, 1.5, size=(3, 2)) * rng.choice([-1, 1], size=(3, 2)))
    fn = getattr(ad, op)

    def loss():
        return ad.sum(fn(x) * ad.constant(np.arange(6.0).reshape(3, 2)))
    assert check_gradients(loss, [x]) < 1e-6


def test_log_gradient():
    x = ad.parameter([0.5, 2.0, 3.0])
    assert check_gradients(lambda: ad.sum(ad.log(x)), [x]) < 1e-6


@pytest.mark.parametrize("axis", [None, 0, 1])
def test_reduction_gradients(axis):
    rng = np.random.default_rng(2)
    x = ad.parameter(rng.standard_normal((3, 4)))
    w = rng.standard_normal((3, 4))

    def loss():
        h = ad.constant(w) * x
        return ad.sum(ad.logsumexp(h, axis=axis)) + ad.sum(ad.mean(h, axis=axis))
    assert check_gradients(loss, [x]) < 1e-6


def test_matmul_transpose_reshape_gradients():
    rng = np.random.default_rng(3)
    a = ad.parameter(rng.standard_normal((3, 4)))
    b = ad.parameter(rng.standard_normal((3, 2)))

    def loss():
        c = a.T @ b
        return ad.sum(ad.square(ad.reshape(c, (2, 4))))
    assert check_gradients(loss, [a, b]) < 1e-6


def test_random_two_layer_mlp_gradient():
    from semigen.models import MlpNetwork
    rng = np.random.default_rng(4)
    net = MlpNetwork([3, 5, 2], rng=rng)
    x = rng.standard_normal((4, 3))
    loss = lambda: ad.mean(ad.square(net(x)))
    assert check_gradients(loss, net.params) < 1e-4


@pytest.mark.parametrize("seed", range(8))
def test_random_loss_configurations(seed):
    loss_fn, params, desc = random_config(np.random.default_rng(100 + seed))
    assert check_gradients(loss_fn, params) < 1e-4, desc


def test_fused_gaussian_matches_composed():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 2))
    theta = ad.parameter(rng.standard_normal((5, 2)))
    fused = ad.gaussian_lme(ad.constant(x), theta, 0.7)
    g1 = ad.backward(ad.sum(fused))[theta]
    diff = ad.reshape(ad.constant(x), (6, 1, 2)) - ad.reshape(theta, (1, 5, 2))
    a = ad.sum(ad.square(diff), axis=2) * (-0.5 / 0.49)
    composed = ad.mean(ad.logsumexp(a, axis=1))
    g2 = ad.backward(composed)[theta]
    assert fused.item() == pytest.approx(composed.item(), abs=1e-12)
    np.testing.assert_allclose(g1, g2, atol=1e-12)


def test_fused_poisson_gradient():
    rng = np.random.default_rng(6)
    x = rng.integers(0, 8, size=5).astype(float)
    theta = ad.parameter(rng.uniform(0.5, 4.0, size=(4, 1)))
    loss = lambda: ad.poisson_lme(x, theta)
    assert check_gradients(loss, [theta]) < 1e-6


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(7)
        from semigen.models import MlpNetwork
        net = MlpNetwork([2, 4, 1], rng=rng)
        loss = ad.mean(ad.softplus(net(rng.standard_normal((5, 2)))))
        grads = ad.backward(loss)
        return loss.item(), [grads[p].tobytes() for p in net.params]
    assert run() == run()


# ---------------------------------------------------------------- Adam

def test_adam_zero_gradient_leaves_params():
    p = ad.parameter([1.0, -2.0])
    state = ad.AdamState.for_params([p])
    ad.adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p.value, [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_is_signed_lr():
    p = ad.parameter([0.0, 0.0, 0.0])
    state = ad.AdamState.for_params([p], lr=0.01)
    ad.adam_step([p], [np.array([3.0, -0.2, 1e-3])], state)
    np.testing.assert_allclose(p.value, [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_constant_gradient_trajectory():
    p = ad.parameter(0.0)
    state = ad.AdamState.for_params([p])
    for _ in range(100):
        ad.adam_step([p], [np.array(1.0)], state)
    assert p.value == pytest.approx(-100 * 2e-4, rel=1e-6)
    assert state.step == 100


def test_adam_moments_start_at_zero_and_defaults():
    p = ad.parameter(np.ones((2, 2)))
    state = ad.AdamState.for_params([p])
    assert (state.lr, state.beta1, state.beta2, state.eps) == (2e-4, 0.5, 0.999, 1e-8)
    assert not state.m[0].any() and not state.v[0].any()


def test_adam_nonfinite_gradient_names_parameter():
    p = ad.parameter([1.0], name="gen.layer0.weight")
    state = ad.AdamState.for_params([p])
    with pytest.raises(FloatingPointError, match="gen.layer0.weight"):
        ad.adam_step([p], [np.array([np.nan])], state)


def test_numeric_grad_helper_on_quadratic():
    x = ad.parameter([1.0, -2.0])
    g = numeric_grad(lambda: ad.sum(ad.square(x)), x)
    np.testing.assert_allclose(g, [2.0, -4.0], atol=1e-8)
