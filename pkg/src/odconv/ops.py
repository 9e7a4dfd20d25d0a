"""Neural-network primitives: grouped 2-D convolution via im2col + GEMM,
bias-free fully connected layers, softmax with temperature, and average
pooling. Array-level functions carry the contracts; each also has a
registered autodiff op.

Convolution is cross-correlation (no kernel flip). The per-sample variant
`conv2d_per_sample` convolves each batch item with its own kernel, which
is what a dynamic layer needs after combining kernels per input; its
output for sample b is bitwise-equal to running that sample alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .autodiff import register_op
from .errors import ParameterError, ShapeError
from .tensor import DTYPE


@dataclass(frozen=True)
class ConvGeometry:
    """Square-kernel convolution geometry."""

    k: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError(f"kernel size must be >= 1, got {self.k}")
        if self.stride < 1:
            raise ParameterError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ParameterError(f"padding must be >= 0, got {self.padding}")
        if self.groups < 1:
            raise ParameterError(f"groups must be >= 1, got {self.groups}")

    def out_extent(self, extent: int) -> int:
        return (extent + 2 * self.padding - self.k) // self.stride + 1


@dataclass
class KernelSet:
    """The n convolutional kernels of one layer: [n, c_out, c_in/groups, k, k]."""

    weights: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 5:
            raise ShapeError(f"kernel set must be rank-5, got {self.weights.shape}")
        if self.weights.shape[0] < 1:
            raise ShapeError("kernel set must hold at least one kernel")
        if not np.all(np.isfinite(self.weights)):
            raise ParameterError("kernel set contains non-finite weights")

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def _check_conv_shapes(x, W, geom: ConvGeometry):
    if x.ndim != 4:
        raise ShapeError(f"conv input must be [b,c,h,w], got {x.shape}")
    if W.ndim != 4:
        raise ShapeError(f"conv kernel must be [c_out,c_in/groups,k,k], got {W.shape}")
    b, c_in, h, w = x.shape
    c_out, cpf, kh, kw = W.shape
    if kh != geom.k or kw != geom.k:
        raise ShapeError(f"kernel spatial size {kh}x{kw} != geometry k={geom.k}")
    if c_in % geom.groups or c_out % geom.groups:
        raise ShapeError(
            f"groups={geom.groups} must divide c_in={c_in} and c_out={c_out}")
    if cpf != c_in // geom.groups:
        raise ShapeError(
            f"kernel expects c_in/groups={cpf}, input gives {c_in // geom.groups}")
    ho, wo = geom.out_extent(h), geom.out_extent(w)
    if ho < 1 or wo < 1:
        raise ShapeError(f"degenerate output extent {ho}x{wo} for input {h}x{w}")
    return b, c_in, c_out, cpf, ho, wo


def _conv_cols_forward(cols, W2, groups, c_out):
    """cols [b,L,c_in*k*k] times a shared kernel matrix [c_out, cpf*k*k]."""
    b, L, q_all = cols.shape
    if groups == 1:
        return (cols.reshape(b * L, q_all) @ W2.T).reshape(b, L, c_out)
    cpg = c_out // groups
    q = q_all // groups
    out = np.empty((b, L, c_out), dtype=cols.dtype)
    colsg = cols.reshape(b, L, groups, q)
    for g in range(groups):
        o = np.ascontiguousarray(colsg[:, :, g, :]).reshape(b * L, q) @ W2[g * cpg:(g + 1) * cpg].T
        out[:, :, g * cpg:(g + 1) * cpg] = o.reshape(b, L, cpg)
    return out


def conv2d(x: np.ndarray, W: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Grouped cross-correlation of [b,c_in,h,w] with [c_out,cpf,k,k]."""
    out, _ = _fwd_conv2d(x, W, geom=geom)
    return out


def conv2d_per_sample(x: np.ndarray, We: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Convolve sample b with its own kernel We[b] of [c_out,cpf,k,k]."""
    out, _ = _fwd_conv2d_ps(x, We, geom=geom)
    return out


def fully_connected(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Bias-free linear map: out = x W^T for x [b,d_in], W [d_out,d_in]."""
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"fully_connected shapes {x.shape} and {W.shape} disagree")
    # unoptimized einsum keeps each output row a plain ordered dot product,
    # independent of batch size
    return np.einsum("bi,oi->bo", x, W, optimize=False)


def softmax_with_temperature(z: np.ndarray, t: float) -> np.ndarray:
    """Row-wise softmax of z/t; rows sum to 1. Requires t > 0."""
    if t <= 0:
        raise ParameterError(f"temperature must be positive, got {t}")
    if z.ndim != 2:
        raise ShapeError(f"softmax expects [b,d], got {z.shape}")
    shifted = (z - z.max(axis=1, keepdims=True)) / DTYPE(t)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def avgpool2d(x: np.ndarray, k: int) -> np.ndarray:
    """Non-overlapping k-by-k average pooling; spatial extents must divide."""
    if x.ndim != 4:
        raise ShapeError(f"avgpool2d expects [b,c,h,w], got {x.shape}")
    b, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"spatial extent {h}x{w} not divisible by pool size {k}")
    return x.reshape(b, c, h // k, k, w // k, k).mean(axis=(3, 5))


# --- autodiff registrations -------------------------------------------------


def _fwd_conv2d(x, W, *, geom):
    b, c_in, c_out, cpf, ho, wo = _check_conv_shapes(x, W, geom)
    cols, _ = backend.im2col(x, geom.k, geom.stride, geom.padding)
    W2 = W.reshape(c_out, cpf * geom.k * geom.k)
    out = _conv_cols_forward(cols, W2, geom.groups, c_out)
    out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(b, c_out, ho, wo)
    return out, (cols, x.shape, W2, ho, wo)


def _bwd_conv2d(grad, ctx, *, geom):
    cols, x_shape, W2, ho, wo = ctx
    b = x_shape[0]
    c_out, q = W2.shape
    L = ho * wo
    k = geom.k
    g2 = np.ascontiguousarray(grad.reshape(b, c_out, L).transpose(0, 2, 1))
    if geom.groups == 1:
        gflat = g2.reshape(b * L, c_out)
        dW2 = gflat.T @ cols.reshape(b * L, q)
        dcols = g2 @ W2  # [b,L,c_out] @ [c_out,q]
    else:
        groups, cpg = geom.groups, c_out // geom.groups
        colsg = cols.reshape(b, L, groups, q)
        dW2 = np.empty_like(W2)
        dcols = np.empty((b, L, groups * q), dtype=grad.dtype)
        dcolsg = dcols.reshape(b, L, groups, q)
        for gi in range(groups):
            gg = np.ascontiguousarray(g2[:, :, gi * cpg:(gi + 1) * cpg])
            cg = np.ascontiguousarray(colsg[:, :, gi, :])
            dW2[gi * cpg:(gi + 1) * cpg] = (
                gg.reshape(b * L, cpg).T @ cg.reshape(b * L, q))
            dcolsg[:, :, gi, :] = gg @ W2[gi * cpg:(gi + 1) * cpg]
    dx = backend.col2im(dcols, x_shape, k, geom.stride, geom.padding, ho, wo)
    dW = dW2.reshape(c_out, q // (k * k), k, k)
    return dx, dW


def _fwd_conv2d_ps(x, We, *, geom):
    if We.ndim != 5 or We.shape[0] != x.shape[0]:
        raise ShapeError(
            f"per-sample kernels must be [b,c_out,cpf,k,k] matching batch, "
            f"got {We.shape} for input {x.shape}")
    b, c_in, c_out, cpf, ho, wo = _check_conv_shapes(x, We[0], geom)
    cols, _ = backend.im2col(x, geom.k, geom.stride, geom.padding)
    We2 = We.reshape(b, c_out, cpf * geom.k * geom.k)
    if geom.groups == 1:
        # one GEMM per batch item keeps samples independent
        out = np.matmul(cols, We2.transpose(0, 2, 1))
    else:
        groups, cpg = geom.groups, c_out // geom.groups
        q = We2.shape[2]
        L = cols.shape[1]
        colsg = cols.reshape(b, L, groups, q)
        out = np.empty((b, L, c_out), dtype=cols.dtype)
        for g in range(groups):
            Wg = We2[:, g * cpg:(g + 1) * cpg, :].transpose(0, 2, 1)
            out[:, :, g * cpg:(g + 1) * cpg] = np.matmul(
                np.ascontiguousarray(colsg[:, :, g, :]), Wg)
    out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(b, c_out, ho, wo)
    return out, (cols, x.shape, We2, ho, wo)


def _bwd_conv2d_ps(grad, ctx, *, geom):
    cols, x_shape, We2, ho, wo = ctx
    b, c_out, q = We2.shape
    L = ho * wo
    k = geom.k
    g2 = np.ascontiguousarray(grad.reshape(b, c_out, L).transpose(0, 2, 1))
    if geom.groups == 1:
        dWe2 = np.matmul(g2.transpose(0, 2, 1), cols)  # [b,c_out,q]
        dcols = np.matmul(g2, We2)  # [b,L,q]
    else:
        groups, cpg = geom.groups, c_out // geom.groups
        colsg = cols.reshape(b, L, groups, q)
        dWe2 = np.empty_like(We2)
        dcols = np.empty((b, L, groups * q), dtype=grad.dtype)
        dcolsg = dcols.reshape(b, L, groups, q)
        for gi in range(groups):
            gg = np.ascontiguousarray(g2[:, :, gi * cpg:(gi + 1) * cpg])
            cg = np.ascontiguousarray(colsg[:, :, gi, :])
            dWe2[:, gi * cpg:(gi + 1) * cpg, :] = np.matmul(
                gg.transpose(0, 2, 1), cg)
            dcolsg[:, :, gi, :] = np.matmul(gg, We2[:, gi * cpg:(gi + 1) * cpg, :])
    dx = backend.col2im(dcols, x_shape, k, geom.stride, geom.padding, ho, wo)
    cpf = q // (k * k)
    dWe = dWe2.reshape(b, c_out, cpf, k, k)
    return dx, dWe


def _fwd_fc(x, W):
    return fully_connected(x, W), (x, W)


def _bwd_fc(grad, ctx):
    x, W = ctx
    dx = np.einsum("bo,oi->bi", grad, W, optimize=False)
    dW = np.einsum("bo,bi->oi", grad, x, optimize=True)
    return dx, dW


def _fwd_softmax_t(z, *, t):
    s = softmax_with_temperature(z, t)
    return s, s


def _bwd_softmax_t(grad, s, *, t):
    inner = (grad * s).sum(axis=1, keepdims=True)
    return ((s * (grad - inner)) / DTYPE(t),)


def _fwd_avgpool2d(x, *, k):
    return avgpool2d(x, k), x.shape


def _bwd_avgpool2d(grad, x_shape, *, k):
    b, c, h, w = x_shape
    g = grad[:, :, :, None, :, None] / DTYPE(k * k)
    return (np.broadcast_to(g, (b, c, h // k, k, w // k, k)).reshape(b, c, h, w).copy(),)


register_op("conv2d", _fwd_conv2d, _bwd_conv2d)
register_op("conv2d_ps", _fwd_conv2d_ps, _bwd_conv2d_ps)
register_op("fc", _fwd_fc, _bwd_fc)
register_op("softmax_t", _fwd_softmax_t, _bwd_softmax_t)
register_op("avgpool2d", _fwd_avgpool2d, _bwd_avgpool2d)
