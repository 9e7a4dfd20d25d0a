"""Self-contained oracle properties over the dynamic convolution layer.

Each property draws its own seeded random instances, compares two
independently written routes to the same quantity, and reports the worst
deviation.  The CLI's verify command and the test suite both run these,
so a regression shows up identically in both places.

``fault`` threads an optional fault-injection tag through the properties;
"combine-order" perturbs the kernel-mixture order inside the linearity
check so the property visibly fails.  It exists to prove the checks can
fail and is never set in production paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import ParameterError
from .layer import (AttentionParams, ODConvConfig, attention_forward,
                    combine_kernels, init_layer, odconv_forward)
from .ops import ConvGeometry, KernelSet, conv2d, conv2d_per_sample
from .reference import mixture_dynamic_forward, naive_conv2d, se_forward

DEFAULT_INSTANCES = 20


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    instances: int
    detail: str = ""


def _rand_geometry(rng, k):
    padding = int(rng.integers(0, (k + 1) // 2 + 1))
    stride = int(rng.integers(1, 3))
    return ConvGeometry(k, stride, padding, 1)


def _rand_instance(rng, k=None):
    """Small random (x, geometry, channels) tuple: b<=2, c<=4, extent<=8."""
    b = int(rng.integers(1, 3))
    c_in = int(rng.integers(1, 5))
    c_out = int(rng.integers(1, 5))
    if k is None:
        k = int(rng.choice([1, 3]))
    geom = _rand_geometry(rng, k)
    extent = int(rng.integers(max(k, 2), 9))
    x = rng.normal(size=(b, c_in, extent, extent))
    return x, geom, c_in, c_out


def _rand_params(rng, cfg):
    """Random attention parameters (heads included) for a config."""
    _, params = init_layer(cfg, seed=int(rng.integers(0, 2 ** 31)))
    fields = {}
    for name, arr in params.named():
        fields[name] = rng.normal(size=arr.shape)
    return AttentionParams(
        w_reduce=fields["w_reduce"],
        w_spatial=fields.get("w_spatial"),
        w_in=fields.get("w_in"),
        w_filter=fields.get("w_filter"),
        w_kernel=fields.get("w_kernel"),
    )


def check_conv_oracle(instances=DEFAULT_INSTANCES, seed=0,
                      fault: Optional[str] = None) -> PropertyResult:
    """Production im2col convolution against the naive loop."""
    rng = np.random.default_rng(seed)
    tol, worst = 1e-12, 0.0
    for _ in range(instances):
        x, geom, c_in, c_out = _rand_instance(rng)
        W = rng.normal(size=(c_out, c_in, geom.k, geom.k))
        got = conv2d(x, W, geom)
        want = naive_conv2d(x, W, geom)
        worst = max(worst, float(np.max(np.abs(got - want))) if got.size
                    else 0.0)
    return PropertyResult("conv-oracle", worst <= tol, worst, tol, instances)


def check_reduction(instances=DEFAULT_INSTANCES, seed=1,
                    fault: Optional[str] = None) -> PropertyResult:
    """All attentions disabled reduces the layer to a plain convolution."""
    rng = np.random.default_rng(seed)
    tol, worst = 1e-12, 0.0
    for _ in range(instances):
        x, geom, c_in, c_out = _rand_instance(rng)
        cfg = ODConvConfig(c_in, c_out, geom, n=1, enable_spatial=False,
                           enable_in_channel=False, enable_filter=False,
                           enable_kernel=False)
        kernels = rng.normal(size=(1, c_out, c_in, geom.k, geom.k))
        params = _rand_params(rng, cfg)
        got = odconv_forward(x, kernels, params, cfg, t=1.0)
        want = conv2d(x, kernels[0], geom)
        worst = max(worst, float(np.max(np.abs(got - want))) if got.size
                    else 0.0)
    return PropertyResult("reduction", worst <= tol, worst, tol, instances)


def check_mixture_equivalence(instances=DEFAULT_INSTANCES, seed=2,
                              fault: Optional[str] = None) -> PropertyResult:
    """Kernel-attention-only layer against the independent oracle."""
    rng = np.random.default_rng(seed)
    tol, worst = 1e-12, 0.0
    for i in range(instances):
        x, geom, c_in, c_out = _rand_instance(rng)
        n = (2, 4)[i % 2]
        cfg = ODConvConfig(c_in, c_out, geom, n=n, enable_spatial=False,
                           enable_in_channel=False, enable_filter=False)
        kernels = rng.normal(size=(n, c_out, c_in, geom.k, geom.k))
        params = _rand_params(rng, cfg)
        t = float(rng.uniform(0.5, 30.0))
        got = odconv_forward(x, kernels, params, cfg, t=t)
        want = mixture_dynamic_forward(x, kernels, params.w_reduce,
                                       params.w_kernel, t, geom)
        worst = max(worst, float(np.max(np.abs(got - want))) if got.size
                    else 0.0)
    return PropertyResult("mixture-equivalence", worst <= tol, worst, tol,
                          instances)


def check_se_variant(instances=DEFAULT_INSTANCES, seed=3,
                     fault: Optional[str] = None) -> PropertyResult:
    """n=1 filter-attention-only equals conv then per-channel scaling."""
    rng = np.random.default_rng(seed)
    tol, worst = 1e-10, 0.0
    for _ in range(instances):
        x, geom, c_in, c_out = _rand_instance(rng)
        if c_out == 1:
            c_out = 2  # branch must be active to exercise the scaling
        cfg = ODConvConfig(c_in, c_out, geom, n=1, enable_spatial=False,
                           enable_in_channel=False, enable_kernel=False)
        kernels = rng.normal(size=(1, c_out, c_in, geom.k, geom.k))
        params = _rand_params(rng, cfg)
        got = odconv_forward(x, kernels, params, cfg, t=1.0)
        want = se_forward(x, kernels[0], params.w_reduce, params.w_filter,
                          geom)
        worst = max(worst, float(np.max(np.abs(got - want))) if got.size
                    else 0.0)
    return PropertyResult("se-variant", worst <= tol, worst, tol, instances)


def check_linearity(instances=DEFAULT_INSTANCES, seed=4,
                    fault: Optional[str] = None) -> PropertyResult:
    """Combining kernels then convolving equals convolving each kernel
    and mixing the outputs, when only the kernel attention varies."""
    rng = np.random.default_rng(seed)
    tol, worst = 1e-10, 0.0
    n = 4
    for _ in range(instances):
        x, geom, c_in, c_out = _rand_instance(rng)
        b = x.shape[0]
        cfg = ODConvConfig(c_in, c_out, geom, n=n, enable_spatial=False,
                           enable_in_channel=False, enable_filter=False)
        kernels = rng.normal(size=(n, c_out, c_in, geom.k, geom.k))
        params = _rand_params(rng, cfg)
        att = attention_forward(x, params, cfg, t=2.0)
        a_w = att.alpha_w
        if fault == "combine-order":
            a_w = np.roll(a_w, 1, axis=1)
        combined = np.stack([
            np.einsum("i,iocuv->ocuv", a_w[bi],
                      kernels, optimize=False)
            for bi in range(b)])
        via_combine = conv2d_per_sample(x, combined, geom)
        per_kernel = np.stack([conv2d(x, kernels[i], geom)
                               for i in range(n)])
        via_outputs = np.einsum("bn,nbohw->bohw", att.alpha_w, per_kernel,
                                optimize=False)
        worst = max(worst, float(np.max(np.abs(via_combine - via_outputs)))
                    if via_combine.size else 0.0)
    return PropertyResult("linearity", worst <= tol, worst, tol, instances)


def gradcheck_layer(cfg: ODConvConfig, seed: int = 0, h: float = 1e-5,
                    t: float = 1.0, batch: int = 2,
                    extent: int = 4) -> Dict[str, float]:
    """Finite-difference check of every parameter group of one layer.

    Returns group name -> max relative error between the tape gradient
    and central differences, for the input, the kernel stack, and every
    present attention tensor.  The loss is a fixed random projection of
    the layer output, which keeps every output element in play.
    """
    from .autodiff import Tape, backward, finite_diff_check, record

    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=(batch, cfg.c_in, extent, extent))
    w0 = rng.normal(size=(cfg.n, cfg.c_out, cfg.c_in_pf, cfg.k, cfg.k))
    params = _rand_params(rng, cfg)
    groups = {"x": x0, "weights": w0}
    groups.update({name: arr for name, arr in params.named()})
    h_out = cfg.geom.out_extent(extent)
    proj = rng.normal(size=(batch, cfg.c_out, h_out, h_out))

    def run(values):
        from .layer import odconv_nodes
        tape = Tape()
        x_node = tape.leaf(values["x"])
        w_node = tape.leaf(values["weights"])
        pnodes = {name: tape.leaf(values[name]) for name in values
                  if name not in ("x", "weights")}
        out = odconv_nodes(tape, x_node, w_node, pnodes, cfg, t)
        weighted = record(tape, "mul", out, tape.constant(proj))
        loss = record(tape, "sum_all", weighted)
        backward(tape, loss)
        named = {"x": x_node, "weights": w_node, **pnodes}
        return float(loss.value[0]), {
            name: (node.grad if node.grad is not None
                   else np.zeros_like(node.value))
            for name, node in named.items()}

    errors = {}
    for group, base in groups.items():
        def f(arr, _group=group):
            values = {name: (arr if name == _group else val)
                      for name, val in groups.items()}
            value, grads = run(values)
            return value, grads[_group]
        errors[group] = finite_diff_check(f, base.copy(), h)
    return errors


PROPERTIES: Dict[str, Callable[..., PropertyResult]] = {
    "conv-oracle": check_conv_oracle,
    "reduction": check_reduction,
    "mixture-equivalence": check_mixture_equivalence,
    "se-variant": check_se_variant,
    "linearity": check_linearity,
}


def run_properties(names: Optional[List[str]] = None,
                   fault: Optional[str] = None) -> List[PropertyResult]:
    """Run the selected properties (all by default) in a stable order."""
    if names is None:
        names = list(PROPERTIES)
    unknown = [n for n in names if n not in PROPERTIES]
    if unknown:
        raise ParameterError(
            f"unknown properties {unknown}; available: {list(PROPERTIES)}")
    return [PROPERTIES[name](fault=fault) for name in names]
