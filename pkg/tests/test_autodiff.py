"""Tape mechanics and per-op gradient checks against finite differences."""

import numpy as np
import pytest

from odconv import autodiff as ad
from odconv.errors import ContractError


def _scalarize(tape, node):
    # reduce to a scalar loss so finite_diff_check applies uniformly
    return ad.record(tape, "sum_all", node)


def _grad_of(op, *arrays, wrt=0, **attrs):
    """Build f(x) -> (loss, grad) where x replaces arrays[wrt]."""

    def f(x):
        tape = ad.Tape()
        nodes = []
        for i, a in enumerate(arrays):
            nodes.append(tape.leaf(x if i == wrt else a))
        out = ad.record(tape, op, *nodes, **attrs)
        loss = _scalarize(tape, out)
        ad.backward(tape, loss)
        grad = nodes[wrt].grad
        return float(loss.value[0]), grad

    return f


def test_leaf_and_constant_nodes():
    tape = ad.Tape()
    a = tape.leaf(np.ones((2, 2)))
    c = tape.constant(np.full((2, 2), 3.0))
    out = ad.record(tape, "mul", a, c)
    loss = _scalarize(tape, out)
    ad.backward(tape, loss)
    np.testing.assert_array_equal(a.grad, np.full((2, 2), 3.0))
    # constant is a plain leaf whose grad nobody reads; it still accumulates
    np.testing.assert_array_equal(c.grad, np.ones((2, 2)))


def test_grad_accumulates_across_uses():
    tape = ad.Tape()
    a = tape.leaf(np.array([2.0, 3.0]))
    out = ad.record(tape, "mul", a, a)
    loss = _scalarize(tape, out)
    ad.backward(tape, loss)
    np.testing.assert_allclose(a.grad, np.array([4.0, 6.0]), atol=1e-15)


def test_register_op_extends_the_tape_vocabulary():
    # a custom op participates in backward like any built-in
    ad.register_op(
        "test-square",
        lambda a: (a * a, a),
        lambda g, ctx: (2.0 * g * ctx,),
    )
    tape = ad.Tape()
    x = tape.leaf(np.array([3.0, -2.0]))
    out = ad.record(tape, "test-square", x)
    loss = _scalarize(tape, out)
    ad.backward(tape, loss)
    np.testing.assert_allclose(x.grad, np.array([6.0, -4.0]), atol=1e-15)


def test_unknown_op_raises():
    tape = ad.Tape()
    a = tape.leaf(np.ones(2))
    with pytest.raises(ContractError):
        ad.record(tape, "no-such-op", a)


def test_finite_diff_binary_ops():
    rng = np.random.default_rng(0)
    for op in ("add", "sub", "mul"):
        for trial in range(5):
            a = rng.normal(size=(3, 4))
            b = rng.normal(size=(3, 4))
            err = ad.finite_diff_check(_grad_of(op, a, b, wrt=0), a)
            assert err < 1e-6, f"{op} wrt a, trial {trial}: {err}"
            err = ad.finite_diff_check(_grad_of(op, a, b, wrt=1), b)
            assert err < 1e-6, f"{op} wrt b, trial {trial}: {err}"


def test_finite_diff_unary_ops():
    rng = np.random.default_rng(1)
    for trial in range(5):
        x = rng.normal(size=(4, 3))
        for op, attrs in [("sigmoid", {}), ("exp", {}),
                          ("scale", {"s": 1.7}),
                          ("reshape", {"shape": (3, 4)})]:
            err = ad.finite_diff_check(_grad_of(op, x, **attrs), x)
            assert err < 1e-6, f"{op} trial {trial}: {err}"


def test_finite_diff_relu_away_from_kink():
    rng = np.random.default_rng(2)
    for _ in range(5):
        x = rng.normal(size=(4, 3))
        # keep samples off the nondifferentiable point
        x[np.abs(x) < 0.1] += 0.2
        err = ad.finite_diff_check(_grad_of("relu", x), x)
        assert err < 1e-6


def test_finite_diff_matmul():
    rng = np.random.default_rng(3)
    for _ in range(5):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        assert ad.finite_diff_check(_grad_of("matmul", a, b, wrt=0), a) < 1e-6
        assert ad.finite_diff_check(_grad_of("matmul", a, b, wrt=1), b) < 1e-6


def test_finite_diff_gap():
    rng = np.random.default_rng(4)
    for _ in range(5):
        x = rng.normal(size=(2, 3, 4, 5))
        assert ad.finite_diff_check(_grad_of("gap", x), x) < 1e-6


def test_sum_all_gradient_is_ones():
    tape = ad.Tape()
    x = tape.leaf(np.arange(6.0).reshape(2, 3))
    loss = ad.record(tape, "sum_all", x)
    ad.backward(tape, loss)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_topological_order_diamond():
    # y = x*x + x: both paths must contribute before the leaf is read
    tape = ad.Tape()
    x = tape.leaf(np.array([3.0]))
    sq = ad.record(tape, "mul", x, x)
    y = ad.record(tape, "add", sq, x)
    loss = ad.record(tape, "sum_all", y)
    ad.backward(tape, loss)
    np.testing.assert_allclose(x.grad, np.array([7.0]), atol=1e-12)
