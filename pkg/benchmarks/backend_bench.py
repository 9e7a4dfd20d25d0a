"""Compare the compiled and fallback backends on the hot kernels.

Runs the same workloads under both implementations, checks the outputs
agree bitwise, and reports median wall time per call. Usage:

    python3 benchmarks/backend_bench.py --iters 200
    python3 benchmarks/backend_bench.py --shape 16x32x28x28 --format json
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time

import numpy as np

from odconv import autodiff as ad
from odconv import backend, ops
from odconv import layer as L


def _parse_shape(text: str):
    parts = [int(p) for p in text.replace(",", "x").split("x")]
    if len(parts) != 4 or min(parts) < 1:
        raise SystemExit(f"bad shape {text!r}; expected BxCxHxW")
    return tuple(parts)


def _time_call(fn, iters, warmup):
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(iters):
        t0 = time.perf_counter_ns()
        fn()
        samples.append((time.perf_counter_ns() - t0) / 1e6)
    return statistics.median(samples)


def _workloads(shape, c_out, k, seed):
    rng = np.random.default_rng(seed)
    b, c_in, h, w = shape
    geom = ops.ConvGeometry(k, 1, k // 2, 1)
    x = rng.normal(size=shape)
    W = rng.normal(size=(c_out, c_in, k, k))
    cfg = L.ODConvConfig(c_in, c_out, geom, n=4, r=0.25, hidden_floor=4)
    kernels, params0 = L.init_layer(cfg, seed)
    params = L.AttentionParams(**{
        name: rng.normal(size=a.shape) * 0.3 for name, a in params0.named()})

    def gather_scatter():
        cols, (ho, wo) = backend.im2col(x, k, 1, k // 2)
        return backend.col2im(cols, x.shape, k, 1, k // 2, ho, wo)

    def conv_forward():
        return ops.conv2d(x, W, geom)

    def conv_backward():
        tape = ad.Tape()
        xn = tape.leaf(x)
        wn = tape.leaf(W)
        out = ad.record(tape, "conv2d", xn, wn, geom=geom)
        loss = ad.record(tape, "sum_all", out)
        ad.backward(tape, loss)
        return xn.grad, wn.grad

    def dynamic_forward():
        return L.odconv_forward(x, kernels, params, cfg, 2.0)

    return {
        "im2col+col2im": gather_scatter,
        "conv forward": conv_forward,
        "conv forward+backward": conv_backward,
        "dynamic layer forward": dynamic_forward,
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="backend comparison on the convolution hot path")
    parser.add_argument("--shape", default="8x16x28x28",
                        help="input as BxCxHxW (default 8x16x28x28)")
    parser.add_argument("--c-out", type=int, default=16)
    parser.add_argument("--k", type=int, default=3)
    parser.add_argument("--iters", type=int, default=100)
    parser.add_argument("--warmup", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--format", choices=["text", "json"], default="text")
    args = parser.parse_args(argv)

    shape = _parse_shape(args.shape)
    backends = []
    if backend.set_backend("auto") == "numba":
        backends.append("numba")
    backends.append("numpy")

    rows = []
    reference = {}
    for name in backends:
        backend.set_backend(name)
        backend.warmup()
        workloads = _workloads(shape, args.c_out, args.k, args.seed)
        for label, fn in workloads.items():
            out = fn()
            flat = np.concatenate([np.ravel(a) for a in out]) if isinstance(
                out, tuple) else np.ravel(out)
            if label in reference:
                if not np.array_equal(reference[label], flat):
                    print(f"MISMATCH: {label} differs between backends",
                          file=sys.stderr)
                    return 1
            else:
                reference[label] = flat
            rows.append({
                "backend": name,
                "workload": label,
                "median_ms": _time_call(fn, args.iters, args.warmup),
            })
    backend.set_backend("auto")

    if args.format == "json":
        print(json.dumps({"shape": list(shape), "c_out": args.c_out,
                          "k": args.k, "iters": args.iters, "rows": rows},
                         indent=2))
        return 0

    print(f"shape {args.shape}  c_out {args.c_out}  k {args.k}  "
          f"iters {args.iters}")
    print(f"{'workload':<24} " + "  ".join(f"{b:>10}" for b in backends)
          + ("   speedup" if len(backends) == 2 else ""))
    by_label = {}
    for row in rows:
        by_label.setdefault(row["workload"], {})[row["backend"]] = row["median_ms"]
    for label, times in by_label.items():
        cells = "  ".join(f"{times[b]:>8.3f}ms" for b in backends)
        if len(backends) == 2:
            ratio = times["numpy"] / times["numba"]
            cells += f"   {ratio:>6.2f}x"
        print(f"{label:<24} {cells}")
    print("outputs agree bitwise across backends")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
