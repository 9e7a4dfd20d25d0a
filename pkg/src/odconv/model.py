"""Small sequential models built from the layer primitives.

A model is an ordered list of layers; each layer owns its parameter arrays
and knows how to push a tape node through itself.  Parameters are exposed
as live arrays under stable dotted names ("layer0.weight",
"layer2.w_reduce", ...) so the optimizer and the checkpoint writer mutate
and serialize the same storage.

``config_string`` renders the topology as one line per layer;
``model_from_config`` parses it back.  The round trip is exact, which is
what lets a checkpoint rebuild the model it was saved from.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .autodiff import Tape, record
from .errors import FormatError, ParameterError
from .layer import (AttentionParams, ODConvConfig, TemperatureSchedule,
                    attention_forward, init_layer, odconv_nodes)
from .ops import ConvGeometry, KernelSet
from .tensor import DTYPE

CONFIG_HEADER = "odconv-model v1"


def _fmt_float(x: float) -> str:
    """Exact decimal round trip (repr of a Python float is shortest-exact)."""
    return repr(float(x))


def _fan_in_uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


class StaticConv2d:
    """Plain convolution layer with a single kernel."""

    def __init__(self, c_in: int, c_out: int, geom: ConvGeometry,
                 seed: int = 0):
        self.c_in, self.c_out, self.geom = c_in, c_out, geom
        cpf = c_in // geom.groups
        rng = np.random.default_rng(seed)
        self.weight = _fan_in_uniform(rng, (c_out, cpf, geom.k, geom.k),
                                      cpf * geom.k * geom.k)

    def param_arrays(self):
        return [("weight", self.weight)]

    def forward(self, tape, x, pnodes, epoch, training):
        return record(tape, "conv2d", x, pnodes["weight"], geom=self.geom)

    def config_line(self) -> str:
        g = self.geom
        return (f"conv c_in={self.c_in} c_out={self.c_out} k={g.k} "
                f"stride={g.stride} padding={g.padding} groups={g.groups}")


class ODConvUnit:
    """Dynamic convolution layer: candidate kernels plus attention params."""

    def __init__(self, cfg: ODConvConfig, seed: int = 0):
        self.cfg = cfg
        kernel_set, params = init_layer(cfg, seed)
        self.weights = kernel_set.weights
        self.params = params

    def param_arrays(self):
        return [("weights", self.weights)] + list(self.params.named())

    def forward(self, tape, x, pnodes, epoch, training):
        t = self.cfg.resolve_temperature(epoch=epoch, training=training)
        att_nodes = {name: pnodes[name] for name, _ in self.params.named()}
        return odconv_nodes(tape, x, pnodes["weights"], att_nodes, self.cfg, t)

    def attention_values(self, x: np.ndarray, t: Optional[float] = None):
        """Plain-array attentions for analysis (inference temperature by
        default)."""
        if t is None:
            t = self.cfg.resolve_temperature(training=False)
        return attention_forward(x, self.params, self.cfg, t)

    def kernel_set(self) -> KernelSet:
        return KernelSet(self.weights)

    def config_line(self) -> str:
        c = self.cfg
        g = c.geom
        src = c.temperature_source
        if isinstance(src, TemperatureSchedule):
            temp = (f"schedule:{_fmt_float(src.t_start)}:"
                    f"{_fmt_float(src.t_end)}:{src.warmup_epochs}")
        else:
            temp = f"fixed:{_fmt_float(float(src))}"
        return (f"odconv c_in={c.c_in} c_out={c.c_out} k={g.k} "
                f"stride={g.stride} padding={g.padding} groups={g.groups} "
                f"n={c.n} r={_fmt_float(c.r)} "
                f"spatial={int(c.enable_spatial)} "
                f"in_channel={int(c.enable_in_channel)} "
                f"filter={int(c.enable_filter)} "
                f"kernel={int(c.enable_kernel)} "
                f"share={int(c.share_attentions)} "
                f"spatial_act={c.spatial_activation} "
                f"floor={c.hidden_floor} temp={temp}")


class Relu:
    def param_arrays(self):
        return []

    def forward(self, tape, x, pnodes, epoch, training):
        return record(tape, "relu", x)

    def config_line(self) -> str:
        return "relu"


class Scale:
    """Fixed parameter-free gain.

    Used after freshly initialized dynamic layers: zero-init heads leave
    every sigmoid branch at 0.5, so a layer with s active sigmoid branches
    starts 2**-s quieter than its static twin.  A constant gain of 2**s
    restores the activation scale without touching the layer's semantics,
    letting both variants share training hyperparameters.
    """

    def __init__(self, factor: float):
        if not factor > 0.0:
            raise ParameterError(f"scale factor must be positive, got {factor}")
        self.factor = float(factor)

    def param_arrays(self):
        return []

    def forward(self, tape, x, pnodes, epoch, training):
        return record(tape, "scale", x, s=self.factor)

    def config_line(self) -> str:
        return f"scale s={_fmt_float(self.factor)}"


class AvgPool2d:
    def __init__(self, k: int):
        if k < 1:
            raise ParameterError(f"pool size must be >= 1, got {k}")
        self.k = k

    def param_arrays(self):
        return []

    def forward(self, tape, x, pnodes, epoch, training):
        return record(tape, "avgpool2d", x, k=self.k)

    def config_line(self) -> str:
        return f"avgpool k={self.k}"


class GlobalAvgPool:
    def param_arrays(self):
        return []

    def forward(self, tape, x, pnodes, epoch, training):
        return record(tape, "gap", x)

    def config_line(self) -> str:
        return "gap"


class Dense:
    """Bias-free fully connected layer on [b, d_in] inputs."""

    def __init__(self, d_in: int, d_out: int, seed: int = 0):
        self.d_in, self.d_out = d_in, d_out
        rng = np.random.default_rng(seed)
        self.weight = _fan_in_uniform(rng, (d_out, d_in), d_in)

    def param_arrays(self):
        return [("weight", self.weight)]

    def forward(self, tape, x, pnodes, epoch, training):
        return record(tape, "fc", x, pnodes["weight"])

    def config_line(self) -> str:
        return f"fc d_in={self.d_in} d_out={self.d_out}"


class SequentialModel:
    """Ordered layer stack with stable dotted parameter names."""

    def __init__(self, layers):
        self.layers = list(layers)

    def named_parameters(self):
        """(name, live array) pairs in topology order."""
        out = []
        for i, layer in enumerate(self.layers):
            for pname, arr in layer.param_arrays():
                out.append((f"layer{i}.{pname}", arr))
        return out

    def set_parameter(self, name: str, value: np.ndarray):
        for pname, arr in self.named_parameters():
            if pname == name:
                if arr.shape != value.shape:
                    raise ParameterError(
                        f"{name}: shape {value.shape} != {arr.shape}")
                arr[...] = value
                return
        raise ParameterError(f"unknown parameter {name}")

    def forward_nodes(self, tape: Tape, x: np.ndarray, epoch=None,
                      training=False):
        """Run the stack on a fresh tape; returns (output node, name->leaf)."""
        node = tape.leaf(np.asarray(x, dtype=DTYPE))
        x_node = node
        leaves = {}
        for i, layer in enumerate(self.layers):
            pnodes = {}
            for pname, arr in layer.param_arrays():
                leaf = tape.leaf(arr)
                pnodes[pname] = leaf
                leaves[f"layer{i}.{pname}"] = leaf
            node = layer.forward(tape, node, pnodes, epoch, training)
        return node, leaves, x_node

    def forward(self, x: np.ndarray, epoch=None, training=False) -> np.ndarray:
        out, _, _ = self.forward_nodes(Tape(), x, epoch, training)
        return out.value

    def config_string(self) -> str:
        lines = [CONFIG_HEADER]
        lines.extend(layer.config_line() for layer in self.layers)
        return "\n".join(lines) + "\n"


def _parse_fields(parts, line):
    fields = {}
    for part in parts:
        if "=" not in part:
            raise FormatError(f"malformed field {part!r} in line {line!r}")
        key, val = part.split("=", 1)
        fields[key] = val
    return fields


def _parse_temp(text: str):
    kind, _, rest = text.partition(":")
    if kind == "fixed":
        return float(rest)
    if kind == "schedule":
        try:
            t_start, t_end, warmup = rest.split(":")
        except ValueError:
            raise FormatError(f"malformed temperature source {text!r}")
        return TemperatureSchedule(float(t_start), float(t_end), int(warmup))
    raise FormatError(f"unknown temperature source {text!r}")


def model_from_config(text: str) -> SequentialModel:
    """Rebuild a model skeleton from ``config_string`` output.

    Parameter values are freshly initialized (seed 0); callers that care
    about values overwrite them afterwards.
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CONFIG_HEADER:
        raise FormatError("missing model config header")
    layers = []
    for line in lines[1:]:
        parts = line.split()
        kind, fields = parts[0], _parse_fields(parts[1:], line)
        try:
            if kind == "conv":
                geom = ConvGeometry(int(fields["k"]), int(fields["stride"]),
                                    int(fields["padding"]),
                                    int(fields["groups"]))
                layers.append(StaticConv2d(int(fields["c_in"]),
                                           int(fields["c_out"]), geom))
            elif kind == "odconv":
                geom = ConvGeometry(int(fields["k"]), int(fields["stride"]),
                                    int(fields["padding"]),
                                    int(fields["groups"]))
                cfg = ODConvConfig(
                    c_in=int(fields["c_in"]), c_out=int(fields["c_out"]),
                    geom=geom, n=int(fields["n"]), r=float(fields["r"]),
                    enable_spatial=bool(int(fields["spatial"])),
                    enable_in_channel=bool(int(fields["in_channel"])),
                    enable_filter=bool(int(fields["filter"])),
                    enable_kernel=bool(int(fields["kernel"])),
                    share_attentions=bool(int(fields["share"])),
                    spatial_activation=fields["spatial_act"],
                    temperature_source=_parse_temp(fields["temp"]),
                    hidden_floor=int(fields["floor"]))
                layers.append(ODConvUnit(cfg))
            elif kind == "relu":
                layers.append(Relu())
            elif kind == "scale":
                layers.append(Scale(float(fields["s"])))
            elif kind == "avgpool":
                layers.append(AvgPool2d(int(fields["k"])))
            elif kind == "gap":
                layers.append(GlobalAvgPool())
            elif kind == "fc":
                layers.append(Dense(int(fields["d_in"]), int(fields["d_out"])))
            else:
                raise FormatError(f"unknown layer kind {kind!r}")
        except KeyError as exc:
            raise FormatError(f"missing field {exc} in line {line!r}")
    return SequentialModel(layers)


def build_toy_model(variant: str, c_in: int = 1, num_classes: int = 4,
                    seed: int = 0, n: int = 4, r: float = 0.25,
                    hidden_floor: int = 8,
                    schedule: Optional[TemperatureSchedule] = None,
                    widths=(8, 16, 16)) -> SequentialModel:
    """Three-convolution classifier for the synthetic texture task.

    ``variant`` is "static" or "odconv".  Both variants draw from the same
    seed stream, and the n-kernel stack's first kernel is bitwise-equal to
    the static variant's kernel (leading-axis draws coincide), so the two
    models start from directly comparable states.
    """
    if variant not in ("static", "odconv"):
        raise ParameterError(f"unknown variant {variant!r}")
    temp = schedule if schedule is not None else TemperatureSchedule()
    rng = np.random.default_rng(seed)
    layers = []
    chans = [c_in, *widths]
    for i in range(3):
        geom = ConvGeometry(3, 1, 1, 1)
        child = int(rng.integers(0, 2 ** 31))
        if variant == "static":
            layers.append(StaticConv2d(chans[i], chans[i + 1], geom,
                                       seed=child))
        else:
            cfg = ODConvConfig(chans[i], chans[i + 1], geom, n=n, r=r,
                               temperature_source=temp,
                               hidden_floor=hidden_floor)
            layers.append(ODConvUnit(cfg, seed=child))
            sig_branches = (int(cfg.spatial_active)
                            + int(cfg.in_channel_active)
                            + int(cfg.filter_active))
            if sig_branches:
                layers.append(Scale(2.0 ** sig_branches))
        layers.append(Relu())
        if i < 2:
            layers.append(AvgPool2d(2))
    layers.append(GlobalAvgPool())
    layers.append(Dense(chans[-1], num_classes,
                        seed=int(rng.integers(0, 2 ** 31))))
    return SequentialModel(layers)
