"""Brute-force oracles: plain-loop implementations kept deliberately
separate from the production im2col path, plus an instrumented operation
counter. Tests compare the two routes; nothing here may import the
production conv code, and nothing here is compiled.

All functions assume the [b, c, h, w] layout and operate in double
precision. They are slow on purpose.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, ShapeError
from .ops import ConvGeometry


def naive_conv2d(x: np.ndarray, W: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Direct sliding-window cross-correlation with zero padding."""
    b, c_in, h, w = x.shape
    c_out, cpf, k, _ = W.shape
    g = geom.groups
    if c_in % g or c_out % g or cpf != c_in // g:
        raise ShapeError("naive_conv2d: group bookkeeping is inconsistent")
    ho, wo = geom.out_extent(h), geom.out_extent(w)
    cpg = c_out // g
    out = np.zeros((b, c_out, ho, wo), dtype=x.dtype)
    for bi in range(b):
        for o in range(c_out):
            grp = o // cpg
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for c in range(cpf):
                        ci = grp * cpf + c
                        for ky in range(k):
                            iy = oy * geom.stride + ky - geom.padding
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(k):
                                ix = ox * geom.stride + kx - geom.padding
                                if ix < 0 or ix >= w:
                                    continue
                                acc += x[bi, ci, iy, ix] * W[o, c, ky, kx]
                    out[bi, o, oy, ox] = acc
    return out


def naive_gap(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    out = np.zeros((b, c), dtype=x.dtype)
    for bi in range(b):
        for ci in range(c):
            acc = 0.0
            for y in range(h):
                for z in range(w):
                    acc += x[bi, ci, y, z]
            out[bi, ci] = acc / (h * w)
    return out


def naive_fc(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    b, d_in = x.shape
    d_out = W.shape[0]
    out = np.zeros((b, d_out), dtype=x.dtype)
    for bi in range(b):
        for o in range(d_out):
            acc = 0.0
            for i in range(d_in):
                acc += x[bi, i] * W[o, i]
            out[bi, o] = acc
    return out


def naive_softmax_t(z: np.ndarray, t: float) -> np.ndarray:
    out = np.zeros_like(z)
    for bi in range(z.shape[0]):
        m = max(z[bi])
        e = [math.exp((v - m) / t) for v in z[bi]]
        s = sum(e)
        out[bi] = [v / s for v in e]
    return out


def _naive_trunk(x, w_reduce):
    """GAP -> reduce FC -> ReLU, all by loops."""
    z = naive_fc(naive_gap(x), w_reduce)
    return np.maximum(z, 0.0)


def mixture_dynamic_forward(x: np.ndarray, weights: np.ndarray, w_reduce: np.ndarray,
                            w_kernel: np.ndarray, t: float, geom: ConvGeometry) -> np.ndarray:
    """Kernel-attention-only dynamic convolution, written from scratch.

    Per sample: softmax-weighted sum of the n kernels, then one naive
    convolution. Serves as the independent check for the degenerate
    configuration of the full layer that uses only the kernel attention.
    """
    n = weights.shape[0]
    z = _naive_trunk(x, w_reduce)
    alpha = naive_softmax_t(naive_fc(z, w_kernel), t)
    outs = []
    for bi in range(x.shape[0]):
        mixed = np.zeros_like(weights[0])
        for i in range(n):
            mixed += alpha[bi, i] * weights[i]
        outs.append(naive_conv2d(x[bi:bi + 1], mixed, geom))
    return np.concatenate(outs, axis=0)


def se_forward(x: np.ndarray, W: np.ndarray, w_reduce: np.ndarray,
               w_filter: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Convolve, then rescale each output channel by a learned gate.

    The filter-attention-only single-kernel layer must match this
    conv-then-scale ordering exactly (scaling the kernel's output channel
    equals scaling the kernel itself).
    """
    z = _naive_trunk(x, w_reduce)
    gate = 1.0 / (1.0 + np.exp(-naive_fc(z, w_filter)))
    y = naive_conv2d(x, W, geom)
    out = np.zeros_like(y)
    for bi in range(y.shape[0]):
        for o in range(y.shape[1]):
            out[bi, o] = y[bi, o] * gate[bi, o]
    return out


class OpCounter:
    """Tally of arithmetic work, bucketed by stage.

    Convolution and FC work is counted as one unit per multiply-accumulate;
    pooling is counted as one unit per element summed; kernel combination
    counts one unit per scalar multiply (and per multiply-accumulate in the
    weighted summation). These conventions mirror the closed-form cost
    model in `complexity`.
    """

    def __init__(self):
        self.buckets: dict[str, int] = {}

    def add(self, bucket: str, count: int) -> None:
        self.buckets[bucket] = self.buckets.get(bucket, 0) + int(count)

    def total(self) -> int:
        return sum(self.buckets.values())

    def extra(self) -> int:
        """Everything beyond the plain convolution itself."""
        return self.total() - self.buckets.get("conv", 0)


def instrumented_odconv_forward(x: np.ndarray, weights: np.ndarray,
                                w_reduce: np.ndarray, heads: dict,
                                geom: ConvGeometry, t: float,
                                counter: OpCounter,
                                spatial_activation: str = "sigmoid") -> np.ndarray:
    """Loop-based replica of the dynamic layer that counts its operations.

    `heads` maps any of "spatial", "in_channel", "filter", "kernel" to FC
    weight matrices; missing heads act as the constant 1. Shared-attention
    mode only.
    """
    b, c_in, h, w = x.shape
    n, c_out, cpf, k, _ = weights.shape
    if heads.keys() - {"spatial", "in_channel", "filter", "kernel"}:
        raise ContractError(f"unknown attention heads {sorted(heads)}")
    ho, wo = geom.out_extent(h), geom.out_extent(w)

    counter.add("gap", b * h * w * c_in)
    z = _naive_trunk(x, w_reduce)
    counter.add("fc", b * w_reduce.size)

    def head_out(name, act):
        Wh = heads.get(name)
        if Wh is None:
            return None
        counter.add("fc", b * Wh.size)
        v = naive_fc(z, Wh)
        if act == "sigmoid":
            return 1.0 / (1.0 + np.exp(-v))
        return naive_softmax_t(v, t if name == "kernel" else 1.0)

    a_s = head_out("spatial", spatial_activation)
    a_c = head_out("in_channel", "sigmoid")
    a_f = head_out("filter", "sigmoid")
    a_w = head_out("kernel", "softmax")

    outs = []
    for bi in range(b):
        # factored combination: spatial x in-channel plane first, then the
        # filter gate, then the weighted kernel sum; only real multiplies
        # are tallied (pure broadcasts are free)
        if a_s is not None and a_c is not None:
            A = np.multiply.outer(a_c[bi], a_s[bi].reshape(k, k))
            counter.add("combine", k * k * cpf)
        elif a_s is not None:
            A = np.broadcast_to(a_s[bi].reshape(1, k, k), (cpf, k, k)).copy()
        elif a_c is not None:
            A = np.broadcast_to(a_c[bi].reshape(cpf, 1, 1), (cpf, k, k)).copy()
        else:
            A = None
        if n == 1:
            mixed = weights[0]
            if A is not None:
                mixed = mixed * A.reshape(1, cpf, k, k)
                counter.add("combine", k * k * cpf * c_out)
            if a_f is not None:
                mixed = mixed * a_f[bi].reshape(c_out, 1, 1, 1)
                counter.add("combine", k * k * cpf * c_out)
        else:
            if A is not None and a_f is not None:
                B = A.reshape(1, cpf, k, k) * a_f[bi].reshape(c_out, 1, 1, 1)
                counter.add("combine", k * k * cpf * c_out)
            elif A is not None:
                B = np.broadcast_to(A.reshape(1, cpf, k, k), (c_out, cpf, k, k))
            elif a_f is not None:
                B = np.broadcast_to(a_f[bi].reshape(c_out, 1, 1, 1), (c_out, cpf, k, k))
            else:
                B = None
            mixed = np.zeros_like(weights[0])
            alpha = a_w[bi] if a_w is not None else np.full(n, 1.0 / n)
            for i in range(n):
                attended = weights[i] if B is None else weights[i] * B
                mixed += alpha[i] * attended
                counter.add("combine", (2 if B is not None else 1) * k * k * cpf * c_out)
        outs.append(naive_conv2d(x[bi:bi + 1], mixed, geom))
    counter.add("conv", b * ho * wo * k * k * cpf * c_out)
    return np.concatenate(outs, axis=0)
