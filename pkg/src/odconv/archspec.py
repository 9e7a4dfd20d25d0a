"""Line-oriented architecture descriptions for the cost engine.

Grammar (one statement per line; blank lines and ``#`` comments ignored)::

    name <identifier>
    input <channels> <height> <width>
    layer kind=<kind> [field=value ...]

Layer kinds and their fields:

* ``conv``: ``c_out`` ``k`` [``stride=1`` ``padding=0`` ``groups=1``]
* ``bn``: [``c_out``] (defaults to the current channel count)
* ``activation``: no fields
* ``pool``: ``k`` [``stride=k`` ``padding=0``] (max/avg alike; costs nothing)
* ``gap``: no fields, collapses spatial extents to 1
* ``add``: residual join marker, no fields
* ``fc``: ``c_out``

Common optional fields: ``c_in`` (override the inferred value),
``repeat=<count>`` (expand the line that many times, re-inferring shapes),
``role`` in {stem, main, shortcut, head} and ``block=<label>``.

Channel counts and spatial extents chain from line to line.  A
``role=shortcut`` line is a side branch: it is costed against the current
chain state but does not advance it, so place shortcut lines at the top of
their block, before the main path runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import List, Optional, Tuple

from .errors import ArchError, FormatError
from .ops import ConvGeometry

KINDS = ("conv", "bn", "activation", "pool", "gap", "add", "fc")
ROLES = ("stem", "main", "shortcut", "head")

_INT_FIELDS = ("c_in", "c_out", "k", "stride", "padding", "groups", "repeat")
_STR_FIELDS = ("kind", "role", "block")


@dataclass(frozen=True)
class DynamicSpec:
    """How a converted conv layer is made dynamic."""

    family: str  # odconv | condconv | dyconv
    n: int
    r: float = 1.0 / 16.0
    hidden_floor: int = 16

    def __post_init__(self):
        if self.family not in ("odconv", "condconv", "dyconv"):
            raise ArchError(f"unknown dynamic family {self.family!r}")
        if self.n < 1:
            raise ArchError(f"kernel count must be >= 1, got {self.n}")
        if not 0.0 < self.r <= 1.0:
            raise ArchError(f"reduction ratio must be in (0, 1], got {self.r}")
        if self.hidden_floor < 1:
            raise ArchError("hidden_floor must be >= 1")


@dataclass(frozen=True)
class LayerDescriptor:
    """One resolved layer with chained shapes."""

    kind: str
    c_in: int
    c_out: int
    k: int
    stride: int
    padding: int
    groups: int
    h_in: int
    w_in: int
    h_out: int
    w_out: int
    role: str = "main"
    block: str = ""
    variant: Optional[DynamicSpec] = None


@dataclass(frozen=True)
class ArchSpec:
    name: str
    input_shape: Tuple[int, int, int]
    layers: Tuple[LayerDescriptor, ...]

    def convs(self):
        return [d for d in self.layers if d.kind == "conv"]


def _parse_layer_fields(parts, line_no):
    fields = {}
    for part in parts:
        if "=" not in part:
            raise FormatError(f"line {line_no}: malformed field {part!r}")
        key, val = part.split("=", 1)
        if key in _INT_FIELDS:
            try:
                fields[key] = int(val)
            except ValueError:
                raise FormatError(
                    f"line {line_no}: field {key} needs an integer, "
                    f"got {val!r}")
        elif key in _STR_FIELDS:
            fields[key] = val
        else:
            raise FormatError(f"line {line_no}: unknown field {key!r}")
    return fields


def _emit(kind, fields, state, line_no):
    """Resolve one layer against the (c, h, w) chain state.

    Returns (descriptor, new_state).
    """
    c, h, w = state
    role = fields.get("role", "main")
    if role not in ROLES:
        raise FormatError(f"line {line_no}: unknown role {role!r}")
    block = fields.get("block", "")
    c_in = fields.get("c_in", c)

    if kind == "conv":
        if "c_out" not in fields or "k" not in fields:
            raise FormatError(f"line {line_no}: conv needs c_out and k")
        k = fields["k"]
        stride = fields.get("stride", 1)
        padding = fields.get("padding", 0)
        groups = fields.get("groups", 1)
        geom = ConvGeometry(k, stride, padding, groups)
        if c_in % groups != 0 or fields["c_out"] % groups != 0:
            raise ArchError(
                f"line {line_no}: channels ({c_in}->{fields['c_out']}) not "
                f"divisible by groups={groups}")
        h_out, w_out = geom.out_extent(h), geom.out_extent(w)
        if h_out < 1 or w_out < 1:
            raise ArchError(f"line {line_no}: degenerate output extent")
        desc = LayerDescriptor("conv", c_in, fields["c_out"], k, stride,
                               padding, groups, h, w, h_out, w_out, role,
                               block)
        new_state = state if role == "shortcut" else (fields["c_out"],
                                                      h_out, w_out)
        return desc, new_state

    if kind == "bn":
        width = fields.get("c_out", c_in)
        desc = LayerDescriptor("bn", width, width, 0, 1, 0, 1, h, w, h, w,
                               role, block)
        return desc, state

    if kind == "activation":
        desc = LayerDescriptor("activation", c_in, c_in, 0, 1, 0, 1, h, w,
                               h, w, role, block)
        return desc, state

    if kind == "pool":
        if "k" not in fields:
            raise FormatError(f"line {line_no}: pool needs k")
        k = fields["k"]
        stride = fields.get("stride", k)
        padding = fields.get("padding", 0)
        geom = ConvGeometry(k, stride, padding, 1)
        h_out, w_out = geom.out_extent(h), geom.out_extent(w)
        if h_out < 1 or w_out < 1:
            raise ArchError(f"line {line_no}: degenerate output extent")
        desc = LayerDescriptor("pool", c_in, c_in, k, stride, padding, 1,
                               h, w, h_out, w_out, role, block)
        return desc, (c_in, h_out, w_out)

    if kind == "gap":
        desc = LayerDescriptor("gap", c_in, c_in, 0, 1, 0, 1, h, w, 1, 1,
                               role, block)
        return desc, (c_in, 1, 1)

    if kind == "add":
        desc = LayerDescriptor("add", c_in, c_in, 0, 1, 0, 1, h, w, h, w,
                               role, block)
        return desc, state

    if kind == "fc":
        if "c_out" not in fields:
            raise FormatError(f"line {line_no}: fc needs c_out")
        desc = LayerDescriptor("fc", c_in, fields["c_out"], 0, 1, 0, 1,
                               h, w, h, w, role, block)
        return desc, (fields["c_out"], h, w)

    raise FormatError(f"line {line_no}: unknown layer kind {kind!r}")


def parse_arch(text: str) -> ArchSpec:
    name = None
    state = None
    input_shape = None
    layers: List[LayerDescriptor] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        head = parts[0]
        if head == "name":
            if len(parts) != 2:
                raise FormatError(f"line {line_no}: name takes one value")
            name = parts[1]
        elif head == "input":
            if len(parts) != 4:
                raise FormatError(
                    f"line {line_no}: input takes channels height width")
            try:
                state = tuple(int(p) for p in parts[1:])
            except ValueError:
                raise FormatError(f"line {line_no}: input needs integers")
            if any(v < 1 for v in state):
                raise ArchError(f"line {line_no}: input extents must be >= 1")
            input_shape = state
        elif head == "layer":
            if state is None:
                raise FormatError(
                    f"line {line_no}: layer before input declaration")
            if len(parts) < 2:
                raise FormatError(f"line {line_no}: layer needs kind=<kind>")
            fields = _parse_layer_fields(parts[1:], line_no)
            kind = fields.pop("kind", None)
            if kind is None:
                raise FormatError(f"line {line_no}: layer needs kind=<kind>")
            if kind not in KINDS:
                raise FormatError(f"line {line_no}: unknown kind {kind!r}")
            repeat = fields.pop("repeat", 1)
            if repeat < 1:
                raise FormatError(f"line {line_no}: repeat must be >= 1")
            for _ in range(repeat):
                desc, state = _emit(kind, fields, state, line_no)
                layers.append(desc)
        else:
            raise FormatError(f"line {line_no}: unknown statement {head!r}")
    if name is None:
        raise FormatError("missing name declaration")
    if input_shape is None:
        raise FormatError("missing input declaration")
    if not layers:
        raise ArchError("architecture has no layers")
    return ArchSpec(name, input_shape, tuple(layers))


def zoo_names() -> List[str]:
    """Bundled architecture names, sorted."""
    pkg = resources.files("odconv") / "archs"
    return sorted(p.name[:-5] for p in pkg.iterdir()
                  if p.name.endswith(".arch"))


def load_zoo_arch(name: str) -> ArchSpec:
    pkg = resources.files("odconv") / "archs"
    path = pkg / f"{name}.arch"
    try:
        text = path.read_text()
    except (FileNotFoundError, OSError):
        raise ArchError(
            f"unknown architecture {name!r}; bundled: {', '.join(zoo_names())}")
    return parse_arch(text)
