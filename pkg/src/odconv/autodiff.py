"""Tape-based reverse-mode automatic differentiation.

Every differentiable operation is registered as a (forward, backward)
pair. `record` runs the forward, stores the node on the tape in creation
order, and `backward` walks the tape once in reverse, accumulating exact
vector-Jacobian products. Gradients of leaves used multiple times sum
their contributions.

Scalars are tensors of shape (1,). Backward rules never modify forward
values, so replaying a tape yields identical results.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ContractError

_OPS: dict[str, tuple[Callable, Callable]] = {}


def register_op(name: str, forward: Callable, backward: Callable) -> None:
    """Register op `name` with forward(*values, **attrs) -> (out, ctx) and
    backward(grad, ctx, **attrs) -> per-input gradient tuple (None = skip)."""
    _OPS[name] = (forward, backward)


class Node:
    """One tape entry: a value, its producers, and its backward rule."""

    __slots__ = ("value", "grad", "parents", "op", "_ctx", "_attrs")

    def __init__(self, value, parents=(), op="leaf", ctx=None, attrs=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.op = op
        self._ctx = ctx
        self._attrs = attrs or {}

    def shape(self):
        return self.value.shape


class Tape:
    """Ordered record of nodes; parents always precede their consumers."""

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value: np.ndarray) -> Node:
        node = Node(np.asarray(value))
        self.nodes.append(node)
        return node

    def constant(self, value: np.ndarray) -> Node:
        # same as a leaf; the name documents that nobody reads its gradient
        return self.leaf(value)


def record(tape: Tape, op: str, *inputs: Node, **attrs) -> Node:
    """Apply a registered op to nodes already on the tape."""
    if op not in _OPS:
        raise ContractError(f"op {op!r} has no registered backward rule")
    forward, _ = _OPS[op]
    out, ctx = forward(*(n.value for n in inputs), **attrs)
    node = Node(out, parents=tuple(inputs), op=op, ctx=ctx, attrs=attrs)
    tape.nodes.append(node)
    return node


def backward(tape: Tape, loss: Node) -> None:
    """Populate .grad for every node contributing to a scalar loss."""
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes):
        if node.grad is None or not node.parents:
            continue
        _, bwd = _OPS[node.op]
        grads = bwd(node.grad, node._ctx, **node._attrs)
        for parent, g in zip(node.parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += g.reshape(parent.value.shape)


def finite_diff_check(f: Callable, x: np.ndarray, h: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    `f` maps a tensor to (scalar value, analytic gradient w.r.t. that
    tensor). Returns max over coordinates of
    |analytic - central| / max(|analytic|, 1e-8).
    """
    _, analytic = f(x)
    analytic = np.asarray(analytic, dtype=np.float64)
    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up, _ = f(x)
        flat[i] = orig - h
        down, _ = f(x)
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ContractError("finite_diff_check: non-finite function value")
        central = (up - down) / (2.0 * h)
        a = analytic.reshape(-1)[i]
        err = abs(a - central) / max(abs(a), 1e-8)
        worst = max(worst, err)
    return worst


# --- tensor-level op registrations -----------------------------------------

def _fwd_add(a, b):
    return T.add(a, b), None


def _fwd_sub(a, b):
    return T.sub(a, b), None


def _fwd_mul(a, b):
    return T.mul(a, b), (a, b)


def _fwd_scale(a, *, s):
    return T.scale(a, s), None


def _fwd_relu(a):
    out = T.relu(a)
    # derivative at exactly 0 is defined as 0, hence the strict inequality
    return out, a > 0


def _fwd_sigmoid(a):
    out = T.sigmoid(a)
    return out, out


def _fwd_exp(a):
    out = T.exp(a)
    return out, out


def _fwd_matmul(a, b):
    return T.matmul(a, b), (a, b)


def _fwd_sum_all(a):
    return np.asarray([a.sum()], dtype=a.dtype), a.shape


def _fwd_reshape(a, *, shape):
    return a.reshape(shape), a.shape


def _fwd_gap(a):
    return T.global_average_pool(a), a.shape


register_op("add", _fwd_add, lambda g, ctx: (g, g))
register_op("sub", _fwd_sub, lambda g, ctx: (g, -g))
register_op("mul", _fwd_mul, lambda g, ctx: (g * ctx[1], g * ctx[0]))
register_op("scale", _fwd_scale, lambda g, ctx, *, s: (g * T.DTYPE(s),))
register_op("relu", _fwd_relu, lambda g, ctx: (g * ctx,))
register_op("sigmoid", _fwd_sigmoid, lambda g, ctx: (g * ctx * (1.0 - ctx),))
register_op("exp", _fwd_exp, lambda g, ctx: (g * ctx,))
register_op(
    "matmul",
    _fwd_matmul,
    lambda g, ctx: (g @ ctx[1].T, ctx[0].T @ g),
)
register_op(
    "sum_all",
    _fwd_sum_all,
    lambda g, ctx: (np.full(ctx, g.reshape(-1)[0]),),
)
register_op(
    "reshape",
    _fwd_reshape,
    lambda g, ctx, *, shape: (g.reshape(ctx),),
)


def _bwd_gap(g, ctx):
    b, c, h, w = ctx
    return (np.broadcast_to(g[:, :, None, None] / (h * w), ctx).copy(),)


register_op("gap", _fwd_gap, _bwd_gap)
