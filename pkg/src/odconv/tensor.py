"""Dense tensor values and the primitives everything else is built on.

A tensor is a C-contiguous numpy ndarray of DTYPE scalars; a shape is a
plain tuple of positive ints. The functions here add the contracts the
rest of the library relies on: explicit shape checks everywhere and no
broadcasting in binary elementwise ops (callers reshape explicitly).

Layout convention: activations are [batch, channel, height, width];
kernel sets are [n, c_out, c_in/groups, k, k].
"""

from __future__ import annotations

import math
import os

import numpy as np

from .errors import NumericError, ShapeError, SizeError

# double precision is the default; float32 is an optional build mode that
# tolerance-bearing tests exclude
DTYPE = np.float32 if os.environ.get("ODCONV_DTYPE") == "float32" else np.float64

_MAX_ELEMENTS = np.iinfo(np.intp).max


def check_shape(shape) -> tuple:
    """Validate extents: every one >= 1, element count within index range."""
    dims = tuple(int(d) for d in shape)
    if len(dims) == 0:
        raise ShapeError("shape must have at least one extent")
    if any(d < 1 for d in dims):
        raise ShapeError(f"extents must be >= 1, got {dims}")
    if math.prod(dims) > _MAX_ELEMENTS:
        raise SizeError(f"element count of {dims} overflows the index type")
    return dims


def zeros(shape) -> np.ndarray:
    return np.zeros(check_shape(shape), dtype=DTYPE)


def ones(shape) -> np.ndarray:
    return np.ones(check_shape(shape), dtype=DTYPE)


def full(shape, value: float) -> np.ndarray:
    return np.full(check_shape(shape), value, dtype=DTYPE)


def tensor(data) -> np.ndarray:
    """Build a tensor from nested lists or an existing array (copies)."""
    out = np.array(data, dtype=DTYPE, order="C")
    if out.ndim == 0:
        out = out.reshape(1)
    return out


def assert_finite(x: np.ndarray, context: str = "result") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{context} contains non-finite values")
    return x


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    # no broadcasting: binary elementwise ops demand equal shapes
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b, "add")
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b, "sub")
    return a - b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape(a, b, "mul")
    return a * b


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return a * DTYPE(s)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic, computed per element."""
    out = np.empty_like(x)
    pos = x >= 0
    neg = ~pos
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[neg])
    out[neg] = ex / (1.0 + ex)
    return out


def exp(x: np.ndarray) -> np.ndarray:
    return assert_finite(np.exp(x), "exp")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rank-2 by rank-2 product c[i,j] = sum_t a[i,t] b[t,j]."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    return a @ b


def global_average_pool(x: np.ndarray) -> np.ndarray:
    """Mean over the spatial extent of a [b, c, h, w] tensor -> [b, c]."""
    if x.ndim != 4:
        raise ShapeError(f"global_average_pool expects rank-4 input, got {x.shape}")
    return x.mean(axis=(2, 3))
