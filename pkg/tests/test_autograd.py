import numpy as np
import pytest

from qclnet import autograd as ag
from qclnet.autograd import (AdamState, Tape, Variable, adam_step, backward,
                             finite_diff_check, zero_grads)
from qclnet.errors import ContractError


def taped(f, *xs):
    """Run f on a fresh tape, backprop, return (value, leaf grads)."""
    tape = Tape()
    leaves = [Variable(np.asarray(x, dtype=np.float64)) for x in xs]
    out = f(tape, *leaves)
    backward(tape, out)
    return out.value, [l.grad for l in leaves]


class TestTapeContract:
    def test_sum_grad_is_ones(self):
        _, (g,) = taped(lambda t, x: ag.rsum(t, x), np.arange(6.0).reshape(2, 3))
        assert np.array_equal(g, np.ones((2, 3)))

    def test_relu_subgradient(self):
        _, (g,) = taped(lambda t, x: ag.rsum(t, ag.relu(t, x)),
                        np.array([-1.0, 2.0]))
        assert np.array_equal(g, np.array([0.0, 1.0]))

    def test_non_scalar_loss_rejected(self):
        tape = Tape()
        v = Variable(np.ones(3))
        out = ag.relu(tape, v)
        with pytest.raises(ContractError):
            backward(tape, out)

    def test_second_backward_rejected(self):
        tape = Tape()
        v = Variable(np.ones(3))
        loss = ag.rsum(tape, v)
        backward(tape, loss)
        with pytest.raises(ContractError):
            backward(tape, loss)

    def test_reset_allows_reuse(self):
        tape = Tape()
        v = Variable(np.ones(3))
        backward(tape, ag.rsum(tape, v))
        tape.reset()
        backward(tape, ag.rsum(tape, v))
        assert np.array_equal(v.grad, np.full(3, 2.0))

    def test_no_tape_is_pure(self):
        v = Variable(np.array([-2.0, 3.0]), requires_grad=False)
        out = ag.relu(None, v)
        assert np.array_equal(out.value, [0.0, 3.0])
        assert v._grad is None

    def test_detached_leaf_gets_no_grad(self):
        tape = Tape()
        a = Variable(np.ones(3))
        b = Variable(np.ones(3), requires_grad=False)
        backward(tape, ag.rsum(tape, ag.mul(tape, a, b)))
        assert np.array_equal(a.grad, np.ones(3))
        assert b._grad is None

    def test_zero_grads(self):
        v = Variable(np.ones(3))
        v.grad += 2.0
        zero_grads([v])
        assert v._grad is None
        assert np.array_equal(v.grad, np.zeros(3))


class TestOpGradients:
    def test_fanout_accumulates(self):
        # y = x*x + x at x=3 -> dy/dx = 7
        _, (g,) = taped(lambda t, x: ag.rsum(t, ag.add(t, ag.mul(t, x, x), x)),
                        np.array([3.0]))
        assert np.array_equal(g, np.array([7.0]))

    def test_broadcast_unbroadcasts(self):
        def f(t, a, b):
            return ag.rsum(t, ag.mul(t, a, b))
        _, (ga, gb) = taped(f, np.ones((2, 3)), np.array([1.0, 2.0, 3.0]))
        assert ga.shape == (2, 3)
        assert gb.shape == (3,)
        assert np.array_equal(gb, np.full(3, 2.0))

    def test_getitem_basic(self):
        def f(t, x):
            return ag.rsum(t, ag.getitem(t, x, (slice(1, 3),)))
        _, (g,) = taped(f, np.arange(4.0))
        assert np.array_equal(g, [0.0, 1.0, 1.0, 0.0])

    def test_getitem_advanced_repeats(self):
        def f(t, x):
            return ag.rsum(t, ag.getitem(t, x, np.array([0, 0, 2])))
        _, (g,) = taped(f, np.arange(3.0))
        assert np.array_equal(g, [2.0, 0.0, 1.0])

    def test_concat_splits_grad(self):
        def f(t, a, b):
            cat = ag.concat(t, [a, b], axis=0)
            return ag.rsum(t, ag.mul(t, cat, cat))
        _, (ga, gb) = taped(f, np.array([1.0, 2.0]), np.array([3.0]))
        assert np.array_equal(ga, [2.0, 4.0])
        assert np.array_equal(gb, [6.0])

    def test_transpose_roundtrip(self):
        def f(t, x):
            y = ag.transpose(t, x, (1, 0))
            return ag.rsum(t, ag.mul(t, y, y))
        x = np.arange(6.0).reshape(2, 3)
        _, (g,) = taped(f, x)
        assert np.array_equal(g, 2.0 * x)

    def test_quadratic_finite_diff(self):
        # f = 0.5 * ||x||^2 has exact analytic gradient x
        rng = np.random.default_rng(0)
        err = finite_diff_check(
            lambda t, x: ag.scale(t, ag.rsum(t, ag.mul(t, x, x)), 0.5),
            rng.standard_normal((4, 5)))
        assert err < 1e-7

    def test_conv2d_finite_diff(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((2, 3, 3, 3))
        err = finite_diff_check(
            lambda t, x: ag.rsum(t, ag.conv2d(t, x, w, None, (1, 1), (1, 1))),
            rng.standard_normal((3, 4, 4)))
        assert err < 1e-6

    def test_amean_keepdims(self):
        def f(t, x):
            m = ag.amean(t, x, (1,))
            return ag.rsum(t, ag.mul(t, m, m))
        x = np.array([[1.0, 3.0], [2.0, 2.0]])
        val, (g,) = taped(f, x)
        assert val == 4.0 + 4.0
        np.testing.assert_allclose(g, [[2.0, 2.0], [2.0, 2.0]])

    def test_upsample2x_finite_diff(self):
        rng = np.random.default_rng(2)
        err = finite_diff_check(
            lambda t, x: ag.rsum(t, ag.mul(t, ag.upsample2x(t, x),
                                           ag.upsample2x(t, x))),
            rng.standard_normal((1, 3, 3)))
        assert err < 1e-7

    def test_softmax_log_softmax_consistency(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((3, 4))
        s = ag.softmax(None, Variable(x, requires_grad=False), 0).value
        ls = ag.log_softmax(None, Variable(x, requires_grad=False), 0).value
        np.testing.assert_allclose(np.log(s), ls, rtol=1e-12, atol=1e-12)


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = Variable(np.array([2.0]))
        state = AdamState.for_params([p])
        adam_step([p], state, lr=1e-3)
        assert np.array_equal(p.value, [2.0])

    def test_first_step_moves_by_lr(self):
        p = Variable(np.array(1.0))
        p.grad += 1.0
        state = AdamState.for_params([p])
        adam_step([p], state, lr=1e-3)
        assert abs(p.value - (1.0 - 1e-3)) < 1e-9

    def test_quadratic_bowl_converges(self):
        p = Variable(np.array(1.0))
        state = AdamState.for_params([p])
        for _ in range(500):
            tape = Tape()
            diff = ag.sub(tape, p, np.asarray(3.0))
            loss = ag.mul(tape, diff, diff)
            backward(tape, loss)
            adam_step([p], state, lr=1e-2)
            zero_grads([p])
        assert abs(float(p.value) - 3.0) < 0.05

    def test_state_mismatch_rejected(self):
        p = Variable(np.array(1.0))
        state = AdamState.for_params([p, Variable(np.array(2.0))])
        with pytest.raises(ContractError):
            adam_step([p], state)
