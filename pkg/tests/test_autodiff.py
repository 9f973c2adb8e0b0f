import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lupi_zsar import autodiff as ad
from lupi_zsar.autodiff import AdamState, Parameter, Tensor
from lupi_zsar.errors import NumericalError, ShapeError, StaleGraphError

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


class TestTensor:
    def test_rejects_nan(self):
        with pytest.raises(NumericalError):
            Tensor([1.0, float("nan")])

    def test_default_dtype(self):
        assert Tensor([1, 2]).dtype == np.float64

    def test_operators(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 4.0])
        np.testing.assert_array_equal((a + b).numpy(), [4, 6])
        np.testing.assert_array_equal((a - b).numpy(), [-2, -2])
        np.testing.assert_array_equal((a * b).numpy(), [3, 8])


class TestLinear:
    def test_identity(self):
        out = ad.linear_forward([[1.0, 2.0]], np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(out.numpy(), [[1, 2]])

    def test_hand_arithmetic(self):
        out = ad.linear_forward([[1.0, 1.0]], [[2.0, 0.0], [0.0, 3.0]], [1.0, 1.0])
        np.testing.assert_array_equal(out.numpy(), [[3, 4]])

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            ad.linear_forward(np.ones((1, 3)), np.eye(2), np.zeros(2))

    def test_gradients(self):
        rng = np.random.default_rng(0)
        w = Parameter("w", rng.standard_normal((3, 2)))
        b = Parameter("b", rng.standard_normal(2))
        x = rng.standard_normal((4, 3))
        closure = lambda: ad.total(ad.mul(ad.linear_forward(x, w, b), ad.linear_forward(x, w, b)))  # noqa: E731
        assert ad.gradient_check(closure, [w, b]) < 1e-8


class TestRelu:
    def test_examples(self):
        np.testing.assert_array_equal(ad.relu([-1.0, 0.0, 2.0]).numpy(), [0, 0, 2])
        np.testing.assert_array_equal(ad.relu(-np.arange(1.0, 5.0)).numpy(), np.zeros(4))

    def test_gradient_is_mask(self):
        p = Parameter("p", [-1.0, 0.0, 2.0])
        ad.backward(ad.total(ad.relu(p)))
        np.testing.assert_array_equal(p.grad, [0, 0, 1])

    def test_gradient_away_from_kink(self):
        rng = np.random.default_rng(1)
        data = rng.standard_normal((5, 4))
        data[np.abs(data) < 10 * 1e-5] = 0.5  # keep every component clear of the kink
        p = Parameter("p", data)
        closure = lambda: ad.total(ad.mul(ad.relu(p), ad.relu(p)))  # noqa: E731
        assert ad.gradient_check(closure, [p]) < 1e-4


class TestSoftmax:
    def test_single(self):
        np.testing.assert_array_equal(ad.softmax_rows([[5.0]]).numpy(), [[1.0]])

    def test_uniform(self):
        np.testing.assert_array_equal(ad.softmax_rows([[0.0, 0.0]]).numpy(), [[0.5, 0.5]])

    def test_hand_value(self):
        np.testing.assert_allclose(ad.softmax_rows([[math.log(1), math.log(3)]]).numpy(), [[0.25, 0.75]],
                                   rtol=0, atol=1e-15)

    def test_large_inputs_stable(self):
        out = ad.softmax_rows([[1000.0, 1000.0, -1000.0]]).numpy()
        np.testing.assert_allclose(out, [[0.5, 0.5, 0.0]], atol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite), finite)
    def test_rows_sum_to_one_and_shift_invariant(self, x, c):
        y = ad.softmax_rows(x).numpy()
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
        assert np.all(y >= 0)
        np.testing.assert_allclose(ad.softmax_rows(x + c).numpy(), y, rtol=0, atol=1e-12)

    def test_gradient_3d(self):
        rng = np.random.default_rng(2)
        p = Parameter("p", rng.standard_normal((2, 3, 4)))
        w = rng.standard_normal((2, 3, 4))
        closure = lambda: ad.total(ad.mul(ad.softmax_rows(p), w))  # noqa: E731
        assert ad.gradient_check(closure, [p]) < 1e-7


class TestSquaredL2:
    def test_zero(self):
        x = np.ones((2, 3))
        assert ad.squared_l2_loss(x, x).item() == 0.0

    def test_single_row(self):
        assert ad.squared_l2_loss([[0.0, 0.0]], [[3.0, 4.0]]).item() == 25.0

    def test_batch_mean(self):
        assert ad.squared_l2_loss([[0.0, 0.0], [0.0, 0.0]], [[3.0, 4.0], [1.0, 0.0]]).item() == 13.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.squared_l2_loss(np.ones((1, 2)), np.ones((1, 3)))


class TestBackward:
    def test_quadratic(self):
        w = Parameter("w", [1.0, 2.0])
        ad.backward(ad.total(ad.mul(w, w)))
        np.testing.assert_array_equal(w.grad, [2, 4])

    def test_unused_parameter(self):
        w, p = Parameter("w", [1.0, 2.0]), Parameter("p", [3.0])
        ad.backward(ad.total(w))
        np.testing.assert_array_equal(p.grad, [0.0])

    def test_shared_subexpression_accumulates(self):
        w = Parameter("w", [3.0])
        y = ad.mul(w, w)
        ad.backward(ad.total(ad.add(y, y)))
        np.testing.assert_array_equal(w.grad, [12.0])

    def test_accumulates_across_calls(self):
        w = Parameter("w", [1.0])
        ad.backward(ad.total(ad.scale(w, 2.0)))
        ad.backward(ad.total(ad.scale(w, 2.0)))
        np.testing.assert_array_equal(w.grad, [4.0])

    def test_stale_graph(self):
        w = Parameter("w", [1.0, 2.0])
        loss = ad.total(ad.mul(w, w))
        ad.backward(loss)
        with pytest.raises(StaleGraphError):
            ad.backward(loss)

    def test_non_scalar(self):
        w = Parameter("w", [1.0, 2.0])
        with pytest.raises(ShapeError):
            ad.backward(ad.mul(w, w))

    def test_deep_chain_no_recursion_limit(self):
        w = Parameter("w", [1.0])
        y = w
        for _ in range(5000):
            y = ad.scale(y, 1.0)
        ad.backward(ad.total(y))
        np.testing.assert_array_equal(w.grad, [1.0])

    def test_matmul_batched_and_ops_gradients(self):
        rng = np.random.default_rng(3)
        a = Parameter("a", rng.standard_normal((2, 3, 4)))
        b = Parameter("b", rng.standard_normal((2, 4, 5)))
        c = Parameter("c", rng.standard_normal((6, 5)))
        d = Parameter("d", rng.standard_normal((6, 2)))
        def closure():
            m = ad.reshape(ad.matmul(a, b), (6, 5))
            m = ad.sub(ad.mul(m, c), ad.transpose(ad.transpose(c)))
            return ad.squared_l2_loss(ad.concat(m, d), np.zeros((6, 7)))
        assert ad.gradient_check(closure, [a, b, c, d]) < 1e-6


class TestAdam:
    def test_first_step_value(self):
        p = Parameter("p", [0.0])
        p.grad[:] = 1.0
        ad.adam_step([p], AdamState(base_lr=0.1))
        # m_hat = 1, v_hat = 1 after bias correction
        np.testing.assert_allclose(p.data, [-0.1 / (1.0 + 1e-8)], rtol=1e-15, atol=0)

    def test_zero_gradient_unchanged(self):
        p = Parameter("p", [1.5, -2.0])
        ad.adam_step([p], AdamState(base_lr=0.1))
        np.testing.assert_array_equal(p.data, [1.5, -2.0])

    def test_only_one_moves(self):
        p, q = Parameter("p", [1.0]), Parameter("q", [1.0])
        p.grad[:] = 0.5
        ad.adam_step([p, q], AdamState(base_lr=0.01))
        assert p.data[0] < 1.0 and q.data[0] == 1.0

    def test_second_step_hand_computed(self):
        p = Parameter("p", [0.0])
        state = AdamState(base_lr=0.1)
        p.grad[:] = 1.0
        ad.adam_step([p], state)
        p.grad[:] = 3.0
        ad.adam_step([p], state)
        m = 0.9 * 0.1 + 0.1 * 3.0
        v = 0.999 * 0.001 + 0.001 * 9.0
        m_hat, v_hat = m / (1 - 0.81), v / (1 - 0.999**2)
        expected = -0.1 / (1 + 1e-8) - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
        np.testing.assert_allclose(p.data, [expected], rtol=1e-13)

    def test_grads_zeroed_and_lr_override(self):
        p = Parameter("p", [0.0])
        p.grad[:] = 2.0
        ad.adam_step([p], AdamState(base_lr=0.1), lr=0.01)
        np.testing.assert_allclose(p.data, [-0.01 * 2.0 / (2.0 + 1e-8)], rtol=1e-14)
        np.testing.assert_array_equal(p.grad, [0.0])

    def test_non_finite(self):
        p = Parameter("p", [0.0])
        p.grad[:] = np.inf
        with pytest.raises(NumericalError):
            ad.adam_step([p], AdamState())


class TestSchedule:
    @pytest.mark.parametrize("epoch,lr", [(0, 1e-4), (4, 1e-4), (5, 5e-5), (9, 5e-5), (10, 2.5e-5), (15, 1.25e-5)])
    def test_values(self, epoch, lr):
        assert ad.lr_schedule(1e-4, epoch) == lr

    def test_negative(self):
        with pytest.raises(ValueError):
            ad.lr_schedule(1e-4, -1)


class TestGradientCheck:
    def test_quadratic_exact(self):
        w = Parameter("w", np.random.default_rng(0).standard_normal(6))
        assert ad.gradient_check(lambda: ad.total(ad.mul(w, w)), [w]) < 1e-9

    def test_detects_wrong_gradient(self):
        w = Parameter("w", [1.0, 2.0])

        def broken():
            y = ad.mul(w, w)
            y._backward = lambda g: (g * 3 * w.data, g * 0)  # wrong on purpose
            return ad.total(y)

        assert ad.gradient_check(broken, [w]) > 0.1

    def test_skips_kink_components(self):
        p = Parameter("p", [0.0, 1.0])
        report = ad.check_gradients(lambda: ad.total(ad.relu(p)), [p])
        assert report.skipped["p"] == 1 and report.probed["p"] == 1
        assert report.max_error < 1e-8

    def test_sampling(self):
        p = Parameter("p", np.linspace(1, 2, 50))
        report = ad.check_gradients(lambda: ad.total(ad.mul(p, p)), [p], max_components=7)
        assert report.probed["p"] == 7

    def test_relative_error(self):
        assert ad.relative_error(1.0, 1.0) == 0.0
        assert ad.relative_error(0.0, 1e-12) == pytest.approx(1e-4)


def test_uniform_init_bounds_and_determinism():
    a = ad.uniform_init(np.random.default_rng(5), 16, (16, 8))
    b = ad.uniform_init(np.random.default_rng(5), 16, (16, 8))
    np.testing.assert_array_equal(a, b)
    assert np.abs(a).max() <= 0.25
