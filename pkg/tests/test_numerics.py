import numpy as np
import pytest

from motionsrc.exceptions import DimensionError
from motionsrc.numerics import (
    ParamWithGrad,
    layernorm_backward,
    layernorm_forward,
    linear_backward,
    linear_forward,
    make_optimizer,
    numerical_gradient,
    optimizer_step,
    relative_error,
    silu,
    silu_backward,
)


class TestLinear:
    def test_zero_input_passes_bias(self):
        out = linear_forward(np.zeros((2, 3)), np.ones((3, 2)), np.array([1.0, 2.0]))
        np.testing.assert_array_equal(out, [[1.0, 2.0], [1.0, 2.0]])

    def test_identity_input_returns_weight(self):
        W = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(linear_forward(np.eye(2), W, np.zeros(2)), W)

    def test_matches_loop_matmul(self, rng):
        x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                expected[i, j] = b[j] + sum(x[i, a] * W[a, j] for a in range(4))
        np.testing.assert_allclose(linear_forward(x, W, b), expected, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            linear_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))

    def test_backward_zero_upstream(self, rng):
        dx, dW, db = linear_backward(rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), np.zeros((3, 2)))
        assert not dx.any() and not dW.any() and not db.any()

    def test_backward_scalar_chain_rule(self):
        dx, dW, db = linear_backward(np.array([[2.0]]), np.array([[3.0]]), np.array([[1.0]]))
        assert dW[0, 0] == 2.0 and dx[0, 0] == 3.0 and db[0] == 1.0

    def test_backward_matches_finite_differences(self, rng):
        x, W, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=3)
        G = rng.normal(size=(4, 3))

        def f():
            return float(np.sum(linear_forward(x, W, b) * G))

        dx, dW, db = linear_backward(x, W, G)
        assert relative_error(dx, numerical_gradient(f, x)) < 1e-4
        assert relative_error(dW, numerical_gradient(f, W)) < 1e-4
        assert relative_error(db, numerical_gradient(f, b)) < 1e-4

    def test_backward_leading_axes(self, rng):
        x, W = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
        G = rng.normal(size=(2, 3, 5))
        _, dW, db = linear_backward(x, W, G)
        _, dW_flat, db_flat = linear_backward(x.reshape(6, 4), W, G.reshape(6, 5))
        np.testing.assert_allclose(dW, dW_flat)
        np.testing.assert_allclose(db, db_flat)


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        out, _ = layernorm_forward(np.array([[5.0, 5.0, 5.0]]), np.ones(3), np.zeros(3))
        np.testing.assert_array_equal(out, np.zeros((1, 3)))

    def test_symmetric_pair(self):
        out, _ = layernorm_forward(np.array([1.0, 3.0]), np.ones(2), np.zeros(2), eps=1e-12)
        np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-6)

    def test_standardizes_rows(self, rng):
        out, cache = layernorm_forward(rng.normal(2.0, 3.0, size=(3, 8)), np.ones(8), np.zeros(8))
        assert np.abs(cache.x_hat.mean(axis=-1)).max() < 1e-6
        np.testing.assert_allclose(cache.x_hat.var(axis=-1), 1.0, atol=1e-4)

    def test_backward_zero_upstream(self, rng):
        _, cache = layernorm_forward(rng.normal(size=(2, 4)), np.ones(4), np.zeros(4))
        dx, dg, db = layernorm_backward(cache, np.zeros((2, 4)))
        assert not dx.any() and not dg.any() and not db.any()

    def test_backward_two_feature_hand_case(self):
        # with D=2 the normalized row is (+-1) regardless of x, so dX is 0
        # up to the eps term, and dGamma is d_out . x_hat
        x = np.array([[1.0, 4.0]])
        _, cache = layernorm_forward(x, np.ones(2), np.zeros(2), eps=1e-12)
        dx, dg, db = layernorm_backward(cache, np.array([[0.3, -0.7]]))
        np.testing.assert_allclose(dx, 0.0, atol=1e-6)
        np.testing.assert_allclose(dg, [-0.3, -0.7], atol=1e-9)
        np.testing.assert_allclose(db, [0.3, -0.7])

    def test_backward_matches_finite_differences(self, rng):
        x = rng.normal(size=(3, 6))
        gamma, beta = rng.normal(1.0, 0.2, size=6), rng.normal(size=6)
        G = rng.normal(size=(3, 6))

        def f():
            return float(np.sum(layernorm_forward(x, gamma, beta)[0] * G))

        _, cache = layernorm_forward(x, gamma, beta)
        dx, dg, db = layernorm_backward(cache, G)
        assert relative_error(dx, numerical_gradient(f, x, h=1e-5)) < 1e-4
        assert relative_error(dg, numerical_gradient(f, gamma, h=1e-5)) < 1e-4
        assert relative_error(db, numerical_gradient(f, beta, h=1e-5)) < 1e-4

    def test_float32_stays_float32(self, rng):
        x = rng.normal(size=(2, 5, 16)).astype(np.float32)
        gamma, beta = np.ones(16, np.float32), np.zeros(16, np.float32)
        out, cache = layernorm_forward(x, gamma, beta)
        assert out.dtype == np.float32 and cache.x_hat.dtype == np.float32
        ref, _ = layernorm_forward(x.astype(np.float64), gamma.astype(np.float64), beta.astype(np.float64))
        np.testing.assert_allclose(out, ref, atol=1e-5)
        dx, _, _ = layernorm_backward(cache, np.ones_like(x))
        assert dx.dtype == np.float32


class TestSilu:
    def test_values(self):
        assert silu(0.0) == 0.0
        assert silu(1.0) == pytest.approx(0.731059, abs=1e-6)

    def test_derivative_at_zero(self):
        assert silu_backward(0.0, 1.0) == pytest.approx(0.5)

    def test_large_inputs_stay_finite(self):
        out = silu(np.array([-1000.0, 1000.0]))
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.0, 1000.0])

    def test_matches_logistic_on_both_sides(self):
        x = np.array([-40.0, -5.0, -0.5, 0.0, 0.5, 5.0, 40.0])
        np.testing.assert_allclose(silu(x), x / (1.0 + np.exp(-x)), rtol=1e-12)

    def test_float32_stays_float32(self):
        x = np.linspace(-90.0, 90.0, 31, dtype=np.float32)
        assert silu(x).dtype == np.float32
        assert silu_backward(x, np.ones_like(x)).dtype == np.float32
        assert np.all(np.isfinite(silu(x)))

    def test_backward_matches_finite_differences(self, rng):
        x = rng.normal(size=20)
        G = rng.normal(size=20)
        analytic = silu_backward(x, G)
        numeric = numerical_gradient(lambda: float(np.sum(silu(x) * G)), x, h=1e-5)
        assert relative_error(analytic, numeric) < 1e-6


class TestOptimizers:
    def test_zero_grad_adam_is_a_no_op(self):
        p = ParamWithGrad(np.array([1.0, -2.0]))
        state = make_optimizer("adam", [p], lr=0.1)
        optimizer_step(state, [p])
        np.testing.assert_array_equal(p.value, [1.0, -2.0])

    def test_first_adam_step_moves_by_lr(self):
        p = ParamWithGrad(np.array([0.0]))
        p.grad[:] = 1.0
        state = make_optimizer("adam", [p], lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        optimizer_step(state, [p])
        assert p.value[0] == pytest.approx(-0.1, abs=1e-6)

    def test_adamw_decoupled_decay(self):
        p = ParamWithGrad(np.array([2.0]))
        state = make_optimizer("adamw", [p], lr=0.01, weight_decay=0.1)
        optimizer_step(state, [p])
        assert p.value[0] == pytest.approx(2.0 * 0.999)

    def test_step_count_and_moments(self):
        p = ParamWithGrad(np.ones(3))
        p.grad[:] = 0.5
        state = make_optimizer("adam", [p])
        optimizer_step(state, [p])
        optimizer_step(state, [p])
        assert state.step_count == 2
        np.testing.assert_allclose(state.m[0], 0.5 * (1 - 0.9**2))

    def test_unknown_kind(self):
        from motionsrc.exceptions import MotionSrcError

        with pytest.raises(MotionSrcError):
            make_optimizer("sgd", [])

    def test_buffer_count_mismatch(self):
        p = ParamWithGrad(np.ones(2))
        state = make_optimizer("adam", [p])
        with pytest.raises(DimensionError):
            optimizer_step(state, [p, p])
