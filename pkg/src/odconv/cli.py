"""Command-line interface.

Subcommands: gradcheck, complexity, train, bench, attention-stats, verify.
Exit codes: 0 success; 1 a verification or contract check failed; 2 usage
error (bad flags or malformed input); 3 I/O failure.  Machine-readable
output schemas are documented in docs/formats.md; text output is for
humans and is not a stable interface.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics
import sys
import time
from typing import Optional

import numpy as np

from . import backend
from .archspec import load_zoo_arch, parse_arch, zoo_names
from .complexity import (DynamicSpec, check_references, cost_report,
                         odconv_extra_madds)
from .errors import (ArchError, ContractError, FormatError, NumericError,
                     OdconvError, ParameterError, ShapeError, TopologyError)
from .layer import ODConvConfig, TemperatureSchedule, hidden_width
from .model import build_toy_model
from .ops import ConvGeometry
from .persistence import load_checkpoint, save_checkpoint
from .training import (OptimizerState, SyntheticDataset,
                       collect_attention_stats, train)
from .verify import PROPERTIES, gradcheck_layer, run_properties

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_IO = 3

BRANCH_NAMES = ("spatial", "in", "filter", "kernel")


def parse_ratio(text: str) -> float:
    """Accept "1/16" or a decimal; the result must land in (0, 1]."""
    try:
        if "/" in text:
            num, den = text.split("/", 1)
            value = float(num) / float(den)
        else:
            value = float(text)
    except (ValueError, ZeroDivisionError):
        raise ParameterError(f"cannot parse ratio {text!r}")
    if not 0.0 < value <= 1.0:
        raise ParameterError(f"ratio must be in (0, 1], got {value}")
    return value


def _parse_flags(text: str) -> dict:
    """Map "all", "none", or a comma list of branch names to enables."""
    if text == "all":
        chosen = set(BRANCH_NAMES)
    elif text == "none":
        chosen = set()
    else:
        chosen = set(part.strip() for part in text.split(",") if part.strip())
        unknown = chosen - set(BRANCH_NAMES)
        if unknown:
            raise ParameterError(
                f"unknown attention flags {sorted(unknown)}; "
                f"choose from {BRANCH_NAMES}")
    return {
        "enable_spatial": "spatial" in chosen,
        "enable_in_channel": "in" in chosen,
        "enable_filter": "filter" in chosen,
        "enable_kernel": "kernel" in chosen,
    }


def _parse_shape(text: str):
    parts = text.replace(",", "x").split("x")
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise ParameterError(f"cannot parse shape {text!r}")
    if len(values) != 4 or min(values) < 1:
        raise ParameterError(
            f"shape must be BxCxHxW with positive extents, got {text!r}")
    return tuple(values)


# --- gradcheck ---------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    flags = _parse_flags(args.flags)
    geom = ConvGeometry(args.k, 1, args.k // 2, 1)
    cfg = ODConvConfig(args.c_in, args.c_out, geom, n=args.n,
                       r=parse_ratio(args.r),
                       hidden_floor=args.hidden_floor,
                       share_attentions=not args.unshared, **flags)
    worst_by_group = {}
    for seed in range(args.seed, args.seed + args.seeds):
        errors = gradcheck_layer(cfg, seed=seed, t=args.temperature)
        for group, err in errors.items():
            worst_by_group[group] = max(worst_by_group.get(group, 0.0), err)
    passed = all(err <= args.tol for err in worst_by_group.values())

    if args.format == "json":
        print(json.dumps({"groups": worst_by_group, "tolerance": args.tol,
                          "seeds": args.seeds, "passed": passed}, indent=2))
    else:
        print(f"gradcheck: n={cfg.n} r={cfg.r:g} flags={args.flags} "
              f"seeds={args.seeds} tol={args.tol:g}")
        for group, err in worst_by_group.items():
            mark = "ok " if err <= args.tol else "BAD"
            print(f"  {mark} {group:12s} max-rel-err {err:.3e}")
        print("result:", "pass" if passed else "fail")
    return EXIT_OK if passed else EXIT_VERIFY


# --- complexity --------------------------------------------------------------

def _dynamic_from_args(args) -> Optional[DynamicSpec]:
    if args.variant == "static":
        return None
    return DynamicSpec(args.variant, args.n, parse_ratio(args.r),
                       args.hidden_floor)


def _report_rows(report):
    for row in report.rows:
        if row.params or row.madds or row.extra_params or row.extra_madds:
            yield row


def cmd_complexity(args) -> int:
    if args.check:
        results = check_references(args.ids or None)
        failed = [r for r in results if not r.ok]
        if args.format == "json":
            print(json.dumps([{
                "id": r.id, "params": r.params, "madds": r.madds,
                "params_ref": r.params_ref, "madds_ref": r.madds_ref,
                "params_err": r.params_err, "madds_err": r.madds_err,
                "ok": r.ok} for r in results], indent=2))
        else:
            for r in results:
                mark = "ok " if r.ok else "BAD"
                print(f"{mark} {r.id:28s} params {r.params/1e6:9.3f}M "
                      f"(ref {r.params_ref/1e6:8.2f}M {r.params_err:+7.2%}) "
                      f"madds {r.madds/1e6:10.1f}M "
                      f"(ref {r.madds_ref/1e6:9.1f}M {r.madds_err:+7.2%})")
            print(f"{len(results) - len(failed)}/{len(results)} entries "
                  f"within tolerance")
        return EXIT_OK if not failed else EXIT_VERIFY

    if args.arch_file:
        with open(args.arch_file) as f:
            arch = parse_arch(f.read())
    elif args.arch:
        arch = load_zoo_arch(args.arch)
    else:
        raise ParameterError("pass --arch or --arch-file (or --check)")

    dynamic = _dynamic_from_args(args)
    placement = args.placement
    if placement is None:
        placement = "none" if dynamic is None else "all-but-first"
    report = cost_report(arch, dynamic, placement)

    if args.format == "json":
        print(json.dumps({
            "arch": report.arch,
            "placement": report.placement,
            "dynamic": None if dynamic is None else {
                "family": dynamic.family, "n": dynamic.n, "r": dynamic.r,
                "hidden_floor": dynamic.hidden_floor},
            "layers": [{
                "index": r.index, "kind": r.kind, "role": r.role,
                "block": r.block, "shape": r.shape, "params": r.params,
                "extra_params": r.extra_params, "madds": r.madds,
                "extra_madds": r.extra_madds} for r in report.rows],
            "total_params": report.total_params,
            "total_madds": report.total_madds}, indent=2))
    elif args.format == "csv":
        print("index,kind,role,block,params,extra_params,madds,extra_madds")
        for r in report.rows:
            print(f"{r.index},{r.kind},{r.role},{r.block},{r.params},"
                  f"{r.extra_params},{r.madds},{r.extra_madds}")
        print(f"total,,,,{report.total_params - sum(r.extra_params for r in report.rows)},"
              f"{sum(r.extra_params for r in report.rows)},"
              f"{report.total_madds - sum(r.extra_madds for r in report.rows)},"
              f"{sum(r.extra_madds for r in report.rows)}")
    else:
        tag = "static" if dynamic is None else (
            f"{dynamic.family} n={dynamic.n} r={dynamic.r:g}")
        print(f"{report.arch} [{tag}] placement={report.placement}")
        print(f"{'idx':>4s} {'kind':10s} {'block':8s} {'params':>12s} "
              f"{'+dyn':>10s} {'madds':>14s} {'+dyn':>12s}  shape")
        for r in _report_rows(report):
            print(f"{r.index:>4d} {r.kind:10s} {r.block:8s} "
                  f"{r.params:>12,} {r.extra_params:>10,} "
                  f"{r.madds:>14,} {r.extra_madds:>12,}  {r.shape}")
        print(f"total params {report.total_params:,} "
              f"({report.total_params / 1e6:.2f}M)   "
              f"madds {report.total_madds:,} "
              f"({report.total_madds / 1e9:.3f}G)")
    return EXIT_OK


# --- train -------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "variant": "odconv",
    "seed": 0,
    "epochs": 15,
    "learning_rate": 0.07,
    "momentum": 0.9,
    "weight_decay": 1e-4,
    "batch_size": 16,
    "n": 4,
    "r": 0.25,
    "hidden_floor": 8,
    "t_start": 30.0,
    "t_end": 1.0,
    "warmup_epochs": 10,
    "num_classes": 4,
    "size": 16,
    "channels": 1,
    "noise_std": 0.4,
    "frequency": 3.0,
    "train_per_class": 96,
    "eval_per_class": 32,
    "dataset_seed": 0,
}

_TRAIN_INT_KEYS = {"seed", "epochs", "batch_size", "n", "hidden_floor",
                   "warmup_epochs", "num_classes", "size", "channels",
                   "train_per_class", "eval_per_class", "dataset_seed"}
_TRAIN_FLOAT_KEYS = {"learning_rate", "momentum", "weight_decay", "t_start",
                     "t_end", "noise_std", "frequency"}


def parse_train_config(text: str) -> dict:
    """Line-oriented "key value" statements; see docs/formats.md."""
    config = dict(TRAIN_DEFAULTS)
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise FormatError(f"line {line_no}: expected 'key value'")
        key, value = parts
        if key not in config:
            raise FormatError(f"line {line_no}: unknown key {key!r}")
        try:
            if key in _TRAIN_INT_KEYS:
                config[key] = int(value)
            elif key == "r":
                config[key] = parse_ratio(value)
            elif key in _TRAIN_FLOAT_KEYS:
                config[key] = float(value)
            else:
                config[key] = value
        except ValueError:
            raise FormatError(f"line {line_no}: bad value for {key}: "
                              f"{value!r}")
    if config["variant"] not in ("static", "odconv"):
        raise FormatError(f"variant must be static or odconv, "
                          f"got {config['variant']!r}")
    return config


def cmd_train(args) -> int:
    if args.config:
        with open(args.config) as f:
            config = parse_train_config(f.read())
    else:
        config = dict(TRAIN_DEFAULTS)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.epochs is not None:
        config["epochs"] = args.epochs

    schedule = TemperatureSchedule(config["t_start"], config["t_end"],
                                   config["warmup_epochs"])
    model = build_toy_model(config["variant"], c_in=config["channels"],
                            num_classes=config["num_classes"],
                            seed=config["seed"], n=config["n"],
                            r=config["r"],
                            hidden_floor=config["hidden_floor"],
                            schedule=schedule)
    dataset = SyntheticDataset(seed=config["dataset_seed"],
                               num_classes=config["num_classes"],
                               size=config["size"],
                               channels=config["channels"],
                               train_per_class=config["train_per_class"],
                               eval_per_class=config["eval_per_class"],
                               noise_std=config["noise_std"],
                               frequency=config["frequency"])
    os.makedirs(args.out, exist_ok=True)
    try:
        record = train(model, dataset, epochs=config["epochs"],
                       schedule=schedule, seed=config["seed"],
                       learning_rate=config["learning_rate"],
                       momentum=config["momentum"],
                       weight_decay=config["weight_decay"],
                       batch_size=config["batch_size"])
    except NumericError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_VERIFY

    csv_path = os.path.join(args.out, "train.csv")
    with open(csv_path, "w") as f:
        f.write(record.to_csv())
    final_temp = schedule.at_epoch(config["epochs"])
    ckpt_path = os.path.join(args.out, "model.ckpt")
    save_checkpoint(model, ckpt_path, epoch=config["epochs"],
                    temperature=final_temp)

    if record.rows:
        last = record.rows[-1]
        print(f"trained {config['variant']} for {config['epochs']} epochs: "
              f"train_acc {last.train_acc:.3f} eval_acc {last.eval_acc:.3f}")
    else:
        print("no epochs requested; wrote header-only CSV and initial "
              "checkpoint")
    print(f"wrote {csv_path} and {ckpt_path}")
    return EXIT_OK


# --- bench -------------------------------------------------------------------

def _bench_layer(kind, c_in, c_out, geom, seed):
    """Returns (forward closure, per-example extra MAdds closed form)."""
    from .layer import init_layer, odconv_forward
    from .ops import conv2d

    rng = np.random.default_rng(seed)
    if kind == "static":
        weight = rng.normal(size=(c_out, c_in, geom.k, geom.k))

        def forward(x):
            return conv2d(x, weight, geom)
        return forward, lambda h, w: 0

    if kind in ("odconv1x", "odconv4x"):
        n = 1 if kind == "odconv1x" else 4
        cfg = ODConvConfig(c_in, c_out, geom, n=n, r=1.0 / 16.0)

        def extra(h, w):
            return odconv_extra_madds(h, w, c_in, c_out, geom.k, n,
                                      1.0 / 16.0)
    elif kind == "kernel-only":
        n = 4
        cfg = ODConvConfig(c_in, c_out, geom, n=n, r=1.0 / 16.0,
                           enable_spatial=False, enable_in_channel=False,
                           enable_filter=False)

        def extra(h, w):
            r = 1.0 / 16.0
            val = (h * w * c_in + c_in * (c_in + n) * r
                   + n * geom.k * geom.k * c_in * c_out)
            return int(val + 0.5)
    else:
        raise ParameterError(f"unknown bench layer {kind!r}")

    weights, params = init_layer(cfg, seed)

    def forward(x):
        return odconv_forward(x, weights, params, cfg, t=1.0)
    return forward, extra


def cmd_bench(args) -> int:
    if args.iters < 100:
        raise ParameterError("bench requires at least 100 iterations")
    if args.threads is not None:
        try:
            import numba
            numba.set_num_threads(args.threads)
        except ImportError:
            print("note: numba unavailable; --threads ignored",
                  file=sys.stderr)
    active = backend.warmup()

    b, c_in, h, w = _parse_shape(args.shape)
    geom = ConvGeometry(args.k, args.stride, args.padding, 1)
    if geom.out_extent(h) < 1 or geom.out_extent(w) < 1:
        raise ParameterError("shape collapses to an empty output")
    forward, extra = _bench_layer(args.layer, c_in, args.c_out, geom,
                                  args.seed)
    rng = np.random.default_rng(args.seed)
    x = rng.normal(size=(b, c_in, h, w))

    for _ in range(args.warmup):
        forward(x)
    samples = []
    for _ in range(args.iters):
        t0 = time.perf_counter()
        forward(x)
        samples.append((time.perf_counter() - t0) * 1e3)
    samples.sort()
    median = statistics.median(samples)
    p90 = samples[min(len(samples) - 1, int(math.ceil(0.9 * len(samples))) - 1)]

    h_out, w_out = geom.out_extent(h), geom.out_extent(w)
    conv_madds = h_out * w_out * geom.k * geom.k * c_in * args.c_out
    extra_madds = extra(h, w)
    payload = {
        "layer": args.layer,
        "shape": [b, c_in, h, w],
        "c_out": args.c_out,
        "k": args.k,
        "backend": active,
        "iters": args.iters,
        "warmup": args.warmup,
        "median_ms": median,
        "p90_ms": p90,
        "analytic_madds_per_example": {
            "conv": conv_madds,
            "attention_extra": extra_madds,
            "total": conv_madds + extra_madds,
        },
    }
    if args.format == "json":
        print(json.dumps(payload, indent=2))
    else:
        print(f"bench {args.layer}  shape {b}x{c_in}x{h}x{w} -> "
              f"{args.c_out}x{h_out}x{w_out} k{args.k}  backend {active}")
        print(f"  {args.iters} iters after {args.warmup} warmup: "
              f"median {median:.3f} ms  p90 {p90:.3f} ms")
        print(f"  analytic per-example madds: conv {conv_madds:,} + "
              f"attention {extra_madds:,} = {conv_madds + extra_madds:,}")
    return EXIT_OK


# --- attention-stats ---------------------------------------------------------

def cmd_attention_stats(args) -> int:
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint).model
    else:
        model = build_toy_model("odconv", seed=args.seed)
    dataset = SyntheticDataset(seed=args.seed)
    images = dataset.eval_images[:args.samples]
    stats = collect_attention_stats(model, images, bins=args.bins)
    if not stats:
        print("model has no dynamic convolution layers", file=sys.stderr)
        return EXIT_USAGE
    payload = {"samples": int(images.shape[0]), "bins": args.bins,
               "layers": stats}
    if args.format == "json":
        print(json.dumps(payload, indent=2))
    else:
        print(f"attention stats over {images.shape[0]} samples")
        for entry in stats:
            print(f"layer {entry['layer']}:")
            for name, s in entry["branches"].items():
                print(f"  {name}: mean {s['mean']:.4f} std {s['std']:.4f} "
                      f"hist {s['histogram']}")
    return EXIT_OK


# --- verify ------------------------------------------------------------------

def cmd_verify(args) -> int:
    names = None
    if args.filter:
        names = [part.strip() for chunk in args.filter
                 for part in chunk.split(",") if part.strip()]
    results = run_properties(names, fault=args.inject_fault)
    failed = [r for r in results if not r.passed]
    if args.format == "json":
        print(json.dumps([{
            "name": r.name, "passed": r.passed, "max_error": r.max_error,
            "tolerance": r.tolerance, "instances": r.instances}
            for r in results], indent=2))
    else:
        for r in results:
            mark = "PASS" if r.passed else "FAIL"
            print(f"{mark} {r.name:18s} max-err {r.max_error:.3e} "
                  f"tol {r.tolerance:g} ({r.instances} instances)")
        print(f"{len(results) - len(failed)}/{len(results)} properties "
              f"passed")
    return EXIT_OK if not failed else EXIT_VERIFY


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odconv",
        description="dynamic convolution numerics, accounting, and "
                    "verification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the layer")
    p.add_argument("--layer", choices=["odconv"], default="odconv")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--r", default="1/16")
    p.add_argument("--flags", default="all",
                   help="all, none, or comma list of "
                        "spatial,in,filter,kernel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1,
                   help="number of consecutive seeds to run")
    p.add_argument("--c-in", type=int, default=3)
    p.add_argument("--c-out", type=int, default=3)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--hidden-floor", type=int, default=2)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--unshared", action="store_true",
                   help="per-kernel attention heads")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("complexity", help="parameter and MAdds accounting")
    p.add_argument("--arch", help=f"bundled: {', '.join(zoo_names())}")
    p.add_argument("--arch-file", help="path to an architecture file")
    p.add_argument("--variant",
                   choices=["static", "odconv", "condconv", "dyconv"],
                   default="static")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--r", default="1/16")
    p.add_argument("--hidden-floor", type=int, default=16)
    p.add_argument("--placement", default=None,
                   help="conversion rule (default all-but-first for "
                        "dynamic variants)")
    p.add_argument("--format", choices=["text", "csv", "json"],
                   default="text")
    p.add_argument("--check", action="store_true",
                   help="recompute the bundled reference catalog")
    p.add_argument("--ids", nargs="*",
                   help="restrict --check to these entry ids")
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("train", help="train on the synthetic texture task")
    p.add_argument("--config", help="training config file")
    p.add_argument("--out", default="train-out",
                   help="output directory for CSV and checkpoint")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--epochs", type=int, default=None,
                   help="override the config epoch count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="forward-pass latency measurement")
    p.add_argument("--layer",
                   choices=["static", "odconv1x", "odconv4x", "kernel-only"],
                   default="odconv4x")
    p.add_argument("--shape", default="8x16x28x28",
                   help="input as BxCxHxW")
    p.add_argument("--c-out", type=int, default=16)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--padding", type=int, default=1)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="pin the numba thread count")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("attention-stats",
                       help="attention distributions over a probe batch")
    p.add_argument("--checkpoint", help="checkpoint to inspect "
                                        "(default: fresh toy model)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--format", choices=["text", "json"], default="json")
    p.set_defaults(func=cmd_attention_stats)

    p = sub.add_parser("verify", help="run the oracle property suite")
    p.add_argument("--filter", action="append", default=None,
                   help=f"property names ({', '.join(PROPERTIES)})")
    p.add_argument("--inject-fault", choices=["combine-order"],
                   default=None,
                   help="test hook: deliberately break the kernel "
                        "combination order")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParameterError, FormatError, ArchError, ShapeError,
            ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, TopologyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OdconvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
