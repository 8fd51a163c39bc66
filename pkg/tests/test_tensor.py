import numpy as np
import pytest
import scipy.sparse as sp

from conftest import numeric_grad
from gnnbench import tensor as T
from gnnbench.optim import AdamState, adam_step
from gnnbench.tensor import Tape, Tensor, backward, gradient_check


def param(value):
    return Tensor(value, requires_grad=True)


def tape_grads(fn, *tensors):
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        out = fn()
    backward(tape, out)
    return [t.grad.copy() for t in tensors]


def check_against_fd(fn, *tensors, tol=1e-6):
    """Compare tape gradients with independent central differences."""
    analytic = tape_grads(fn, *tensors)
    for t, a in zip(tensors, analytic):
        num = numeric_grad(lambda: fn().item(), t.value)
        np.testing.assert_allclose(a, num, rtol=tol, atol=tol)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def weights_for(shape, rng):
    return Tensor(rng.standard_normal(shape))


class TestMatmul:
    def test_identity(self, rng):
        m = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(T.matmul(Tensor(np.eye(3)), Tensor(m)).value, m)

    def test_scalar_chain_rule(self):
        a, b = param([[2.0]]), param([[3.0]])
        ga, gb = tape_grads(lambda: T.matmul(a, b), a, b)
        assert T.matmul(a, b).item() == 6.0
        assert ga[0, 0] == 3.0 and gb[0, 0] == 2.0

    def test_finite_differences(self, rng):
        a, b = param(rng.standard_normal((4, 3))), param(rng.standard_normal((3, 2)))
        r = weights_for((4, 2), rng)
        check_against_fd(lambda: T.sum_all(T.mul(T.matmul(a, b), r)), a, b)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestSpmm:
    def test_identity(self, rng):
        h = rng.standard_normal((5, 2))
        np.testing.assert_array_equal(T.spmm(sp.identity(5, format="csr"), Tensor(h)).value, h)

    def test_triangle_column_means(self):
        s = sp.csr_matrix(np.full((3, 3), 1 / 3))
        out = T.spmm(s, Tensor(np.eye(3))).value
        np.testing.assert_allclose(out, np.full((3, 3), 1 / 3))

    @pytest.mark.parametrize("n", [1, 7, 30])
    def test_dense_oracle_and_grad(self, rng, n):
        dense = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.3)
        dense = dense + dense.T
        s = sp.csr_matrix(dense)
        h = param(rng.standard_normal((n, 3)))
        np.testing.assert_allclose(T.spmm(s, h).value, dense @ h.value, atol=1e-12)
        r = weights_for((n, 3), rng)
        check_against_fd(lambda: T.sum_all(T.mul(T.spmm(s, h), r)), h)


class TestElementwise:
    def test_relu_values(self):
        np.testing.assert_array_equal(T.relu(Tensor([[-1.0, 2.0]])).value, [[0.0, 2.0]])

    def test_sigmoid_zero(self):
        assert T.sigmoid(Tensor([[0.0]])).item() == 0.5

    def test_leaky_relu_derivative_at_zero(self):
        x = param([[0.0]])
        (g,) = tape_grads(lambda: T.leaky_relu(x, 0.2), x)
        assert g[0, 0] == 0.2

    @pytest.mark.parametrize("op", ["relu", "leaky_relu", "sigmoid", "scale"])
    def test_unary_grads(self, rng, op):
        x = param(rng.standard_normal((4, 3)))
        r = weights_for((4, 3), rng)
        f = {"relu": T.relu, "leaky_relu": T.leaky_relu, "sigmoid": T.sigmoid,
             "scale": lambda t: T.scale(t, -2.5)}[op]
        check_against_fd(lambda: T.sum_all(T.mul(f(x), r)), x)

    def test_binary_grads(self, rng):
        a, b = param(rng.standard_normal((4, 3))), param(rng.standard_normal((4, 3)))
        c = param(rng.standard_normal((4, 1)))
        bias = param(rng.standard_normal((1, 3)))
        r = weights_for((4, 1), rng)
        check_against_fd(
            lambda: T.sum_all(T.mul(T.rowdot(T.add_bias(T.mul(T.add(a, b), c), bias), a), r)),
            a, b, c, bias)

    def test_concat_shapes_and_grads(self, rng):
        a, b = param(rng.standard_normal((5, 2))), param(rng.standard_normal((5, 3)))
        out = T.concat_cols([a, b])
        assert out.shape == (5, 5)
        r = weights_for((5, 5), rng)
        check_against_fd(lambda: T.sum_all(T.mul(T.concat_cols([a, b]), r)), a, b)

    def test_take_rows_and_cols_grads(self, rng):
        a = param(rng.standard_normal((4, 6)))
        idx = np.array([0, 3, 3, 1, 0])
        r = weights_for((5, 2), rng)
        check_against_fd(lambda: T.sum_all(T.mul(T.take_cols(T.take_rows(a, idx), 2, 4), r)), a)

    def test_add_shape_mismatch(self):
        with pytest.raises(ValueError):
            T.add(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3))))

    def test_concat_row_mismatch(self):
        with pytest.raises(ValueError):
            T.concat_cols([Tensor(np.ones((2, 2))), Tensor(np.ones((3, 2)))])

    def test_nonfinite_raises(self):
        with np.errstate(over="ignore"), pytest.raises(T.NonFiniteError):
            T.scale(Tensor([[1e308]]), 10.0)


class TestSegmentOps:
    def test_softmax_singleton(self):
        assert T.segment_softmax(Tensor([[3.7]]), [0], 1).item() == 1.0

    def test_softmax_pair(self):
        np.testing.assert_array_equal(T.segment_softmax(Tensor([[0.0], [0.0]]), [0, 0], 1).value,
                                      [[0.5], [0.5]])

    def test_softmax_empty(self):
        assert T.segment_softmax(Tensor(np.zeros((0, 1))), np.zeros(0, dtype=int), 3).shape == (0, 1)

    def test_softmax_sums_and_range(self, rng):
        for _ in range(20):
            e, n = int(rng.integers(1, 60)), int(rng.integers(1, 10))
            tgt = rng.integers(0, n, e)
            y = T.segment_softmax(Tensor(rng.standard_normal((e, 1)) * 30), tgt, n).value[:, 0]
            assert np.all((y > 0) & (y <= 1))
            sums = np.bincount(tgt, weights=y, minlength=n)
            np.testing.assert_allclose(sums[np.unique(tgt)], 1.0, atol=1e-12)

    def test_softmax_stable_large_logits(self):
        y = T.segment_softmax(Tensor([[1000.0], [1001.0]]), [0, 0], 1).value
        assert np.all(np.isfinite(y))

    def test_softmax_grad(self, rng):
        x = param(rng.standard_normal((9, 2)))
        tgt = np.array([0, 0, 1, 2, 2, 2, 1, 0, 3])
        r = weights_for((9, 2), rng)
        check_against_fd(lambda: T.sum_all(T.mul(T.segment_softmax(x, tgt, 4), r)), x)

    def test_reduce_single(self):
        out = T.segment_reduce(Tensor([[4.0, 5.0]]), [0], 2).value
        np.testing.assert_array_equal(out, [[4.0, 5.0], [0.0, 0.0]])

    def test_reduce_mean(self):
        assert T.segment_reduce(Tensor([[1.0], [3.0]]), [0, 0], 1, "mean").item() == 2.0

    def test_reduce_sum_dense_oracle(self, rng):
        n = 8
        a = (rng.random((n, n)) < 0.4).astype(float)
        np.fill_diagonal(a, 0)
        dst, src = np.nonzero(a)
        h = rng.standard_normal((n, 3))
        out = T.segment_reduce(T.take_rows(Tensor(h), src), dst, n, "sum").value
        np.testing.assert_allclose(out, a @ h, atol=1e-12)

    @pytest.mark.parametrize("mode", ["sum", "mean"])
    def test_reduce_grad(self, rng, mode):
        v = param(rng.standard_normal((7, 2)))
        tgt = np.array([0, 2, 2, 2, 0, 3, 2])
        r = weights_for((5, 2), rng)
        check_against_fd(lambda: T.sum_all(T.mul(T.segment_reduce(v, tgt, 5, mode), r)), v)


class TestDropout:
    def test_inference_identity(self, rng):
        t = Tensor(np.ones((3, 3)))
        assert T.dropout(t, 0.5, False, rng) is t

    def test_zero_p_identity(self, rng):
        t = Tensor(np.ones((3, 3)))
        assert T.dropout(t, 0.0, True, rng) is t

    def test_expectation(self, rng):
        out = T.dropout(Tensor(np.ones((100_000, 1))), 0.2, True, rng).value
        assert abs(out.mean() - 1.0) < 0.02
        assert set(np.unique(out)) <= {0.0, 1.25}

    def test_bad_p(self, rng):
        with pytest.raises(ValueError):
            T.dropout(Tensor(np.ones((2, 2))), 1.0, True, rng)

    def test_backward_uses_mask(self, rng):
        x = param(np.ones((50, 2)))
        with Tape() as tape:
            y = T.dropout(x, 0.3, True, rng)
            out = T.sum_all(y)
        backward(tape, out)
        np.testing.assert_array_equal(x.grad, y.value)


class TestLoss:
    def test_ln2(self):
        loss = T.weighted_bce_with_logits(Tensor([[0.0]]), [1], 1.0, [True])
        assert loss.item() == pytest.approx(np.log(2), abs=1e-15)

    def test_large_logit_no_overflow(self):
        assert T.weighted_bce_with_logits(Tensor([[40.0]]), [1], 1.0, [True]).item() < 1e-15

    @pytest.mark.parametrize("z", [-1e6, -1e3, 1e3, 1e6])
    def test_finite_for_huge_logits(self, z):
        for y in (0, 1):
            assert np.isfinite(T.weighted_bce_with_logits(Tensor([[z]]), [y], 3.0, [True]).item())

    def test_weighted_mean_formula(self, rng):
        z = rng.standard_normal(10)
        y = rng.integers(0, 2, 10)
        mask = rng.random(10) < 0.7
        mask[0] = True
        w = np.where(y == 1, 4.0, 1.0)
        p = 1 / (1 + np.exp(-z))
        per = -(y * np.log(p) + (1 - y) * np.log(1 - p))
        expect = (w[mask] * per[mask]).sum() / w[mask].sum()
        got = T.weighted_bce_with_logits(Tensor(z), y, 4.0, mask).item()
        assert got == pytest.approx(expect, rel=1e-12)

    def test_grad(self, rng):
        z = param(rng.standard_normal((12, 1)) * 3)
        y = rng.integers(0, 2, 12)
        mask = rng.random(12) < 0.6
        mask[:2] = True
        check_against_fd(lambda: T.weighted_bce_with_logits(z, y, 2.5, mask), z)

    def test_empty_mask(self):
        with pytest.raises(ValueError):
            T.weighted_bce_with_logits(Tensor([[0.0]]), [1], 1.0, [False])


class TestBackward:
    def test_sum_gives_ones(self, rng):
        w = param(rng.standard_normal((3, 2)))
        (g,) = tape_grads(lambda: T.sum_all(w), w)
        np.testing.assert_array_equal(g, np.ones((3, 2)))

    def test_accumulates(self, rng):
        w = param(rng.standard_normal((3, 2)))
        with Tape() as tape:
            out = T.sum_all(T.scale(w, 3.0))
        backward(tape, out)
        backward(tape, out)
        np.testing.assert_array_equal(w.grad, np.full((3, 2), 6.0))

    def test_non_leaf_and_constants_untouched(self, rng):
        w = param(rng.standard_normal((3, 2)))
        c = Tensor(rng.standard_normal((2, 2)))
        with Tape() as tape:
            out = T.sum_all(T.matmul(w, c))
        backward(tape, out)
        assert not np.any(c.grad)

    def test_composite_relu_matmul(self, rng):
        a, b = param(rng.standard_normal((5, 4))), param(rng.standard_normal((4, 3)))
        r = weights_for((5, 3), rng)
        check_against_fd(lambda: T.sum_all(T.mul(T.relu(T.matmul(a, b)), r)), a, b)

    def test_non_scalar_loss(self, rng):
        w = param(rng.standard_normal((3, 2)))
        with Tape() as tape:
            out = T.scale(w, 2.0)
        with pytest.raises(ValueError):
            backward(tape, out)

    def test_no_recording_without_tape(self, rng):
        w = param(rng.standard_normal((2, 2)))
        with Tape() as tape:
            pass
        T.sum_all(w)
        assert len(tape) == 0


class TestAdam:
    def test_first_step_magnitude(self):
        for g in (1e-3, 0.5, -7.0):
            w = param([[1.0]])
            w.grad = np.array([[g]])
            adam_step([w], AdamState(weight_decay=0.0))
            assert abs(1.0 - w.item()) == pytest.approx(0.01, rel=1e-4)

    def test_zero_grad_identity(self, rng):
        w = param(rng.standard_normal((3, 3)))
        before = w.value.copy()
        state = AdamState(weight_decay=0.0)
        for _ in range(5):
            adam_step([w], state)
        np.testing.assert_array_equal(w.value, before)
        assert state.t == 5

    def test_grads_zeroed_and_v_nonnegative(self, rng):
        w = param(rng.standard_normal((2, 2)))
        w.grad = rng.standard_normal((2, 2))
        state = AdamState()
        adam_step([w], state)
        assert not np.any(w.grad)
        assert np.all(state.v[0] >= 0)

    def test_quadratic_matches_scalar_reference(self):
        w = param([[1.0]])
        state = AdamState(weight_decay=0.0)
        m = v = 0.0
        ref = 1.0
        for t in range(1, 101):
            with Tape() as tape:
                loss = T.sum_all(T.mul(w, w))
            backward(tape, loss)
            adam_step([w], state)
            g = 2 * ref
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert w.item() == pytest.approx(ref, abs=1e-12)
        assert abs(w.item()) < 0.5

    def test_coupled_weight_decay(self):
        w = param([[2.0]])
        adam_step([w], AdamState(weight_decay=0.5))
        # gradient is 0 + 0.5 * 2 = 1, so the first step moves by lr
        assert w.item() == pytest.approx(1.99, abs=1e-9)

    def test_state_shape_mismatch(self, rng):
        w = param(rng.standard_normal((2, 2)))
        state = AdamState(m=[np.zeros((3, 3))], v=[np.zeros((3, 3))])
        with pytest.raises(ValueError):
            adam_step([w], state)

    def test_non_finite_update_raises(self):
        w = param([[1.0]])
        w.grad = np.array([[np.inf]])
        with np.errstate(invalid="ignore"), pytest.raises(T.NonFiniteError):
            adam_step([w], AdamState())
        assert w.item() == 1.0


class TestGradientCheck:
    def test_linear_map(self, rng):
        w = param(rng.standard_normal((3, 2)))
        x = Tensor(rng.standard_normal((4, 3)))
        assert gradient_check(lambda: T.sum_all(T.matmul(x, w)), [w]) < 1e-9

    def test_detects_wrong_rule(self, rng):
        def bad_sigmoid(t):
            s = 1 / (1 + np.exp(-t.value))
            return T._emit(s, (t,), lambda g: (g * s,))
        w = param(rng.standard_normal((3, 2)))
        assert gradient_check(lambda: T.sum_all(bad_sigmoid(w)), [w]) > 1e-2

    def test_detects_nondeterminism(self, rng):
        w = param(rng.standard_normal((3, 2)))
        noise = np.random.default_rng(0)
        with pytest.raises(RuntimeError):
            gradient_check(lambda: T.sum_all(T.dropout(w, 0.5, True, noise)), [w])

    def test_restores_state(self, rng):
        x = Tensor(rng.standard_normal((2, 2)))
        gradient_check(lambda: T.sum_all(T.relu(x)), [x])
        assert not x.requires_grad and not np.any(x.grad)
