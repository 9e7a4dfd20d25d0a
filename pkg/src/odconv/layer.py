"""Dynamic convolution layer with four kernel-space attention branches.

A layer holds ``n`` candidate kernels plus a small attention network that
maps the input to four attention sets:

* ``alpha_s``: one weight per spatial tap (k x k),
* ``alpha_c``: one weight per kernel input channel (c_in / groups),
* ``alpha_f``: one weight per output filter (c_out),
* ``alpha_w``: a temperature-softmax mixture over the n kernels.

The effective kernel for sample ``b`` is

    W_eff[o, c, u, v] = sum_i alpha_w[b, i] * alpha_f[b, o] * alpha_c[b, c]
                               * alpha_s[b, u, v] * W[i, o, c, u, v]

and the layer output is a regular convolution of sample ``b`` with its own
``W_eff``.  Disabled or degenerate branches contribute the constant 1.

Degenerate branches: a branch whose output dimension is 1 (spatial when
k == 1, input-channel when c_in/groups == 1, kernel when n == 1, filter
when c_out == 1) carries no head matrix; a sigmoid over one logit would be
an input-independent gate and a softmax over one logit is identically 1.

With ``share_attentions=False`` the spatial, input-channel, and filter
branches produce one attention set per candidate kernel: head matrices
gain a factor n in their output width and attention arrays gain a leading
kernel axis after the batch axis.  There is still a single reduction trunk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .autodiff import Node, Tape, record, register_op
from .errors import ParameterError, ShapeError
from .ops import ConvGeometry, KernelSet
from .tensor import DTYPE


@dataclass(frozen=True)
class TemperatureSchedule:
    """Linear softmax-temperature warmup: t_start at epoch 0, t_end after
    warmup_epochs, constant afterwards."""

    t_start: float = 30.0
    t_end: float = 1.0
    warmup_epochs: int = 10

    def __post_init__(self):
        if self.t_start <= 0.0 or self.t_end <= 0.0:
            raise ParameterError("temperatures must be positive")
        if self.warmup_epochs < 1:
            raise ParameterError("warmup_epochs must be >= 1")

    def at_epoch(self, epoch: int) -> float:
        if epoch < 0:
            raise ParameterError(f"epoch must be >= 0, got {epoch}")
        frac = min(epoch, self.warmup_epochs) / self.warmup_epochs
        return self.t_start + (self.t_end - self.t_start) * frac


def hidden_width(c_in: int, r: float, floor: int = 16) -> int:
    """Attention-trunk hidden width: round(c_in * r), floored.

    Round half up so the result is independent of the host rounding mode.
    """
    if not 0.0 < r <= 1.0:
        raise ParameterError(f"reduction ratio must be in (0, 1], got {r}")
    if floor < 1:
        raise ParameterError(f"hidden floor must be >= 1, got {floor}")
    return max(int(math.floor(c_in * r + 0.5)), floor)


@dataclass(frozen=True)
class ODConvConfig:
    """Static description of one dynamic convolution layer."""

    c_in: int
    c_out: int
    geom: ConvGeometry
    n: int = 1
    r: float = 1.0 / 16.0
    enable_spatial: bool = True
    enable_in_channel: bool = True
    enable_filter: bool = True
    enable_kernel: bool = True
    share_attentions: bool = True
    spatial_activation: str = "sigmoid"
    temperature_source: Union[TemperatureSchedule, float] = 1.0
    hidden_floor: int = 16

    def __post_init__(self):
        if self.c_in < 1 or self.c_out < 1:
            raise ParameterError("channel counts must be >= 1")
        if self.c_in % self.geom.groups != 0:
            raise ParameterError(
                f"c_in={self.c_in} not divisible by groups={self.geom.groups}")
        if self.c_out % self.geom.groups != 0:
            raise ParameterError(
                f"c_out={self.c_out} not divisible by groups={self.geom.groups}")
        if self.n < 1:
            raise ParameterError(f"kernel count must be >= 1, got {self.n}")
        if not 0.0 < self.r <= 1.0:
            raise ParameterError(f"reduction ratio must be in (0, 1], got {self.r}")
        if self.spatial_activation not in ("sigmoid", "softmax"):
            raise ParameterError(
                f"spatial_activation must be 'sigmoid' or 'softmax', "
                f"got {self.spatial_activation!r}")
        if isinstance(self.temperature_source, TemperatureSchedule):
            pass
        elif isinstance(self.temperature_source, (int, float)):
            if float(self.temperature_source) <= 0.0:
                raise ParameterError("fixed temperature must be positive")
        else:
            raise ParameterError(
                "temperature_source must be a TemperatureSchedule or a "
                "positive number")
        if self.hidden_floor < 1:
            raise ParameterError("hidden_floor must be >= 1")

    @property
    def k(self) -> int:
        return self.geom.k

    @property
    def c_in_pf(self) -> int:
        """Input channels seen by one filter (c_in / groups)."""
        return self.c_in // self.geom.groups

    @property
    def hidden(self) -> int:
        return hidden_width(self.c_in, self.r, self.hidden_floor)

    # A branch is active when requested and its output dimension exceeds 1.
    @property
    def spatial_active(self) -> bool:
        return self.enable_spatial and self.k > 1

    @property
    def in_channel_active(self) -> bool:
        return self.enable_in_channel and self.c_in_pf > 1

    @property
    def filter_active(self) -> bool:
        return self.enable_filter and self.c_out > 1

    @property
    def kernel_active(self) -> bool:
        return self.enable_kernel and self.n > 1

    def resolve_temperature(self, epoch: Optional[int] = None,
                            training: bool = False) -> float:
        """Softmax temperature for a forward pass.

        Schedules anneal during training and sit at t_end for inference;
        a fixed source applies everywhere.
        """
        src = self.temperature_source
        if isinstance(src, TemperatureSchedule):
            if training:
                if epoch is None:
                    raise ParameterError(
                        "training with a schedule requires an epoch")
                return src.at_epoch(epoch)
            return src.t_end
        return float(src)


@dataclass
class AttentionParams:
    """Trainable tensors of the attention network.

    ``w_reduce`` is [hidden, c_in].  Each head matrix is [d, hidden] where d
    is the branch output width (k*k, c_in_pf, c_out, n; times n when
    attentions are unshared).  A head is None when its branch is inactive.
    """

    w_reduce: np.ndarray
    w_spatial: Optional[np.ndarray] = None
    w_in: Optional[np.ndarray] = None
    w_filter: Optional[np.ndarray] = None
    w_kernel: Optional[np.ndarray] = None

    def named(self):
        """(name, array) pairs for present tensors, in a fixed order."""
        out = [("w_reduce", self.w_reduce)]
        for name in ("w_spatial", "w_in", "w_filter", "w_kernel"):
            arr = getattr(self, name)
            if arr is not None:
                out.append((name, arr))
        return out


@dataclass
class AttentionSet:
    """The four attention arrays for one batch.

    Shared attentions: alpha_s [b,k,k], alpha_c [b,c_in_pf],
    alpha_f [b,c_out], alpha_w [b,n].  Unshared attentions carry a kernel
    axis after the batch axis (alpha_w is per-kernel by nature).  Inactive
    branches hold the constant 1 at full shape.  Fields are either plain
    arrays or tape nodes depending on the construction path.
    """

    alpha_s: object
    alpha_c: object
    alpha_f: object
    alpha_w: object


def head_shapes(cfg: ODConvConfig) -> dict:
    """Shapes of the present attention tensors, in checkpoint order."""
    shapes = {"w_reduce": (cfg.hidden, cfg.c_in)}
    per = cfg.n if not cfg.share_attentions else 1
    if cfg.spatial_active:
        shapes["w_spatial"] = (per * cfg.k * cfg.k, cfg.hidden)
    if cfg.in_channel_active:
        shapes["w_in"] = (per * cfg.c_in_pf, cfg.hidden)
    if cfg.filter_active:
        shapes["w_filter"] = (per * cfg.c_out, cfg.hidden)
    if cfg.kernel_active:
        shapes["w_kernel"] = (cfg.n, cfg.hidden)
    return shapes


def init_layer(cfg: ODConvConfig, seed: int):
    """Deterministic parameter initialization.

    Kernels and the reduction matrix draw from a fan-in-scaled uniform;
    head matrices start at zero so a fresh layer acts as a plain
    convolution scaled by 0.5 per active sigmoid branch with a uniform
    kernel mixture.
    """
    rng = np.random.default_rng(seed)
    k, cpf = cfg.k, cfg.c_in_pf
    bound_k = 1.0 / math.sqrt(cpf * k * k)
    kernels = rng.uniform(-bound_k, bound_k,
                          size=(cfg.n, cfg.c_out, cpf, k, k)).astype(DTYPE)
    bound_r = 1.0 / math.sqrt(cfg.c_in)
    shapes = head_shapes(cfg)
    w_reduce = rng.uniform(-bound_r, bound_r,
                           size=shapes["w_reduce"]).astype(DTYPE)
    heads = {name: np.zeros(shape, dtype=DTYPE)
             for name, shape in shapes.items() if name != "w_reduce"}
    params = AttentionParams(w_reduce=w_reduce, **heads)
    return KernelSet(kernels), params


def _check_attention_shapes(x, params: AttentionParams, cfg: ODConvConfig):
    if x.ndim != 4:
        raise ShapeError(f"expected rank-4 input, got shape {x.shape}")
    if x.shape[1] != cfg.c_in:
        raise ShapeError(
            f"input has {x.shape[1]} channels, layer expects {cfg.c_in}")
    expected = head_shapes(cfg)
    for name, shape in expected.items():
        arr = getattr(params, name)
        if arr is None:
            raise ShapeError(f"missing attention tensor {name}")
        if tuple(arr.shape) != shape:
            raise ShapeError(
                f"{name} has shape {tuple(arr.shape)}, expected {shape}")
    for name in ("w_spatial", "w_in", "w_filter", "w_kernel"):
        if name not in expected and getattr(params, name) is not None:
            raise ShapeError(f"unexpected attention tensor {name}")


def attention_nodes(tape: Tape, x: Node, pnodes: dict, cfg: ODConvConfig,
                    t: float) -> AttentionSet:
    """Differentiable attention forward on a tape.

    ``pnodes`` maps present tensor names to tape nodes.  Inactive branches
    come back as constant-one nodes of full shape so downstream code never
    branches on the configuration.
    """
    b = x.value.shape[0]
    k, cpf, c_out, n = cfg.k, cfg.c_in_pf, cfg.c_out, cfg.n
    per = 1 if cfg.share_attentions else n

    pooled = record(tape, "gap", x)
    z = record(tape, "relu", record(tape, "fc", pooled, pnodes["w_reduce"]))

    def ones(shape):
        return tape.constant(np.ones(shape, dtype=DTYPE))

    def head(name):
        return record(tape, "fc", z, pnodes[name])

    if cfg.spatial_active:
        logits = head("w_spatial")
        if cfg.spatial_activation == "sigmoid":
            act = record(tape, "sigmoid", logits)
        else:
            # normalize each kernel's k*k taps independently
            flat = record(tape, "reshape", logits, shape=(b * per, k * k))
            soft = record(tape, "softmax_t", flat, t=1.0)
            act = record(tape, "reshape", soft, shape=(b, per * k * k))
        shape = (b, k, k) if cfg.share_attentions else (b, n, k, k)
        alpha_s = record(tape, "reshape", act, shape=shape)
    else:
        alpha_s = ones((b, k, k) if cfg.share_attentions else (b, n, k, k))

    if cfg.in_channel_active:
        sig = record(tape, "sigmoid", head("w_in"))
        shape = (b, cpf) if cfg.share_attentions else (b, n, cpf)
        alpha_c = record(tape, "reshape", sig, shape=shape)
    else:
        alpha_c = ones((b, cpf) if cfg.share_attentions else (b, n, cpf))

    if cfg.filter_active:
        sig = record(tape, "sigmoid", head("w_filter"))
        shape = (b, c_out) if cfg.share_attentions else (b, n, c_out)
        alpha_f = record(tape, "reshape", sig, shape=shape)
    else:
        alpha_f = ones((b, c_out) if cfg.share_attentions else (b, n, c_out))

    if cfg.kernel_active:
        alpha_w = record(tape, "softmax_t", head("w_kernel"), t=t)
    else:
        alpha_w = tape.constant(np.full((b, n), 1.0 / n, dtype=DTYPE))

    return AttentionSet(alpha_s, alpha_c, alpha_f, alpha_w)


def _params_to_nodes(tape: Tape, params: AttentionParams) -> dict:
    return {name: tape.leaf(arr) for name, arr in params.named()}


def attention_forward(x: np.ndarray, params: AttentionParams,
                      cfg: ODConvConfig, t: float) -> AttentionSet:
    """Plain-array attention forward (single implementation with the
    differentiable path: runs it on a throwaway tape)."""
    _check_attention_shapes(x, params, cfg)
    tape = Tape()
    att = attention_nodes(tape, tape.leaf(x), _params_to_nodes(tape, params),
                          cfg, t)
    return AttentionSet(att.alpha_s.value, att.alpha_c.value,
                        att.alpha_f.value, att.alpha_w.value)


# --- fused kernel combination -------------------------------------------

def _fwd_combine(a_s, a_c, a_f, a_w, W, *, share):
    if share:
        # factor the shared gates out of the kernel sum
        gate = (a_f[:, :, None, None, None]
                * a_c[:, None, :, None, None]
                * a_s[:, None, None, :, :])
        mix = np.einsum("bi,iocuv->bocuv", a_w, W, optimize=False)
        out = gate * mix
        return out, (a_s, a_c, a_f, a_w, W, gate, mix)
    gate = (a_f[:, :, :, None, None, None]
            * a_c[:, :, None, :, None, None]
            * a_s[:, :, None, None, :, :])
    weighted = a_w[:, :, None, None, None, None] * gate
    out = np.einsum("bnocuv,nocuv->bocuv", weighted, W, optimize=False)
    return out, (a_s, a_c, a_f, a_w, W, gate, None)


def _bwd_combine(grad, ctx, *, share):
    a_s, a_c, a_f, a_w, W, gate, mix = ctx
    if share:
        gm = grad * mix
        gp = grad * gate
        d_s = np.einsum("bocuv,bo,bc->buv", gm, a_f, a_c, optimize=True)
        d_c = np.einsum("bocuv,bo,buv->bc", gm, a_f, a_s, optimize=True)
        d_f = np.einsum("bocuv,bc,buv->bo", gm, a_c, a_s, optimize=True)
        d_w = np.einsum("bocuv,iocuv->bi", gp, W, optimize=True)
        d_W = np.einsum("bi,bocuv->iocuv", a_w, gp, optimize=True)
        return d_s, d_c, d_f, d_w, d_W
    q = grad[:, None] * W[None]  # [b, n, o, c, u, v]
    d_w = np.einsum("bnocuv,bnocuv->bn", q, gate, optimize=True)
    qw = q * a_w[:, :, None, None, None, None]
    d_f = np.einsum("bnocuv,bnc,bnuv->bno", qw, a_c, a_s, optimize=True)
    d_c = np.einsum("bnocuv,bno,bnuv->bnc", qw, a_f, a_s, optimize=True)
    d_s = np.einsum("bnocuv,bno,bnc->bnuv", qw, a_f, a_c, optimize=True)
    d_W = np.einsum("bnocuv,bn->nocuv", grad[:, None] * gate, a_w,
                    optimize=True)
    return d_s, d_c, d_f, d_w, d_W


register_op("combine", _fwd_combine, _bwd_combine)


def combine_kernels(W, att: AttentionSet, b: int,
                    cfg: ODConvConfig) -> np.ndarray:
    """Effective kernel for one sample, straight from the definition.

    Kept as an explicit per-kernel loop; the fused batched path is tested
    against this form.
    """
    kernels = W.weights if isinstance(W, KernelSet) else np.asarray(W)
    a_s = np.asarray(att.alpha_s)[b]
    a_c = np.asarray(att.alpha_c)[b]
    a_f = np.asarray(att.alpha_f)[b]
    a_w = np.asarray(att.alpha_w)[b]
    out = np.zeros(kernels.shape[1:], dtype=kernels.dtype)
    for i in range(cfg.n):
        s_i, c_i, f_i = (a_s, a_c, a_f) if cfg.share_attentions else \
            (a_s[i], a_c[i], a_f[i])
        out += a_w[i] * (kernels[i]
                         * f_i[:, None, None, None]
                         * c_i[None, :, None, None]
                         * s_i[None, None, :, :])
    return out


def odconv_nodes(tape: Tape, x: Node, w_node: Node, pnodes: dict,
                 cfg: ODConvConfig, t: float) -> Node:
    """Differentiable layer forward: attentions, fused combine, then a
    per-sample convolution."""
    att = attention_nodes(tape, x, pnodes, cfg, t)
    w_eff = record(tape, "combine", att.alpha_s, att.alpha_c, att.alpha_f,
                   att.alpha_w, w_node, share=cfg.share_attentions)
    return record(tape, "conv2d_ps", x, w_eff, geom=cfg.geom)


def odconv_forward(x: np.ndarray, W, params: AttentionParams,
                   cfg: ODConvConfig, t: float) -> np.ndarray:
    """Plain-array layer forward."""
    _check_attention_shapes(x, params, cfg)
    kernels = W.weights if isinstance(W, KernelSet) else np.asarray(W)
    if kernels.shape != (cfg.n, cfg.c_out, cfg.c_in_pf, cfg.k, cfg.k):
        raise ShapeError(
            f"kernel stack has shape {kernels.shape}, expected "
            f"{(cfg.n, cfg.c_out, cfg.c_in_pf, cfg.k, cfg.k)}")
    tape = Tape()
    out = odconv_nodes(tape, tape.leaf(x), tape.leaf(kernels),
                       _params_to_nodes(tape, params), cfg, t)
    return out.value
