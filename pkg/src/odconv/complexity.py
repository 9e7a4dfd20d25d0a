"""Parameter and multiply-add accounting for static and dynamic convnets.

Conventions (shared by every counter here):

* A conv contributes ``c_out * (c_in / groups) * k * k`` parameters
  (no bias; batch norm carries the shift) and one multiply-add per
  output element per tap: ``h_out * w_out * c_out * (c_in/groups) * k^2``.
* Batch norm contributes ``2 * c`` parameters and no multiply-adds.
* A fully connected layer contributes ``c_in * c_out + c_out`` parameters
  (bias included) and ``c_in * c_out`` multiply-adds.
* Activations, pooling, residual adds and global average pooling are free
  in both ledgers, except that a dynamic conv's own attention path charges
  its global average pool explicitly (it is part of that layer's cost).

Dynamic families:

* ``odconv``: four-branch attention over a bank of ``n`` kernels.
* ``condconv``: per-example routing weights from a single sigmoid FC.
* ``dyconv``: per-example routing from a bottleneck MLP (reduction 4).

All totals are exact integer sums over the per-layer breakdown, so
``report.total_*`` always equals the sum of its rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

from .archspec import ArchSpec, DynamicSpec, LayerDescriptor
from .errors import ArchError, ParameterError
from .layer import hidden_width

PLACEMENTS = ("all", "all-but-first", "all-but-stem", "all-1x1", "all-3x3",
              "last-blocks", "condconv-style", "none")


@dataclass(frozen=True)
class LayerCost:
    """Cost of one layer: static part plus dynamic surcharge."""

    index: int
    kind: str
    role: str
    block: str
    shape: str
    params: int
    madds: int
    extra_params: int = 0
    extra_madds: int = 0

    @property
    def total_params(self):
        return self.params + self.extra_params

    @property
    def total_madds(self):
        return self.madds + self.extra_madds


@dataclass(frozen=True)
class CostReport:
    arch: str
    placement: str
    dynamic: Optional[DynamicSpec]
    rows: Tuple[LayerCost, ...]

    @property
    def total_params(self):
        return sum(r.total_params for r in self.rows)

    @property
    def total_madds(self):
        return sum(r.total_madds for r in self.rows)


def _conv_shape(d: LayerDescriptor) -> str:
    tag = f"{d.c_in}x{d.h_in}x{d.w_in} -> {d.c_out}x{d.h_out}x{d.w_out} k{d.k}"
    if d.stride != 1:
        tag += f" s{d.stride}"
    if d.groups != 1:
        tag += f" g{d.groups}"
    return tag


def _static_cost(d: LayerDescriptor) -> Tuple[int, int]:
    if d.kind == "conv":
        params = d.c_out * (d.c_in // d.groups) * d.k * d.k
        madds = d.h_out * d.w_out * params
        return params, madds
    if d.kind == "bn":
        return 2 * d.c_out, 0
    if d.kind == "fc":
        return d.c_in * d.c_out + d.c_out, d.c_in * d.c_out
    return 0, 0


def _attention_fc_madds(c_in, cpf, c_out, k, n, hid):
    """Multiply-adds of the shared trunk plus every active head."""
    total = c_in * hid
    if k > 1:
        total += hid * k * k
    if cpf > 1:
        total += hid * cpf
    total += hid * c_out
    if n > 1:
        total += hid * n
    return total


def _attention_fc_params(c_in, cpf, c_out, k, n, hid):
    total = c_in * hid
    if k > 1:
        total += hid * k * k
    if cpf > 1:
        total += hid * cpf
    total += hid * c_out
    if n > 1:
        total += hid * n
    return total


def _dynamic_extra(d: LayerDescriptor, spec: DynamicSpec) -> Tuple[int, int]:
    """(extra params, extra multiply-adds) for one converted layer.

    Convs gain a per-example global average pool; a converted fully
    connected layer routes from the already-pooled feature vector, so its
    pooling is free.  The routing families (condconv, dyconv) blend the
    weight bank once per example; the four-branch family pays the
    element-wise gating described by the closed forms instead.
    """
    c_in, c_out, n = d.c_in, d.c_out, spec.n
    if d.kind == "fc":
        k, cpf, gap = 1, c_in, 0
        base_params = c_in * c_out + c_out
    else:
        k, cpf, gap = d.k, c_in // d.groups, d.h_in * d.w_in * d.c_in
        base_params = c_out * cpf * k * k

    if spec.family == "odconv":
        if d.kind == "fc":
            raise ArchError("the four-branch family converts convs only")
        hid = hidden_width(c_in, spec.r, spec.hidden_floor)
        extra_params = (n - 1) * base_params + _attention_fc_params(
            c_in, cpf, c_out, k, n, hid)
        fc = _attention_fc_madds(c_in, cpf, c_out, k, n, hid)
        if n > 1:
            combine = k * k * cpf * (1 + c_out + 2 * n * c_out)
        else:
            combine = k * k * cpf * (1 + 2 * c_out)
        return extra_params, gap + fc + combine

    if spec.family == "condconv":
        extra_params = (n - 1) * base_params + c_in * n
        routing = c_in * n
        mix = n * k * k * cpf * c_out
        return extra_params, gap + routing + mix

    if spec.family == "dyconv":
        hid = c_in // 4
        if hid < 1:
            raise ParameterError(
                f"dyconv needs c_in >= 4, got c_in={c_in}")
        extra_params = (n - 1) * base_params + c_in * hid + hid * n
        routing = c_in * hid + hid * n
        mix = n * k * k * cpf * c_out
        return extra_params, gap + routing + mix

    raise ArchError(f"unknown dynamic family {spec.family!r}")


def _last_block_labels(arch: ArchSpec, count: int) -> set:
    labels = []
    for d in arch.layers:
        if d.block and d.block not in labels:
            labels.append(d.block)
    if count < 1:
        raise ParameterError(f"last-blocks count must be >= 1, got {count}")
    return set(labels[-count:])


def _trailing_body_blocks(arch: ArchSpec, count: int) -> set:
    """Labels of the last ``count`` blocks that hold a main k>1 conv.

    Residual and inverted-residual bodies all contain a spatial conv on
    the main path, which separates them from stem, projection-only and
    head segments.
    """
    labels = []
    for d in arch.layers:
        if (d.kind == "conv" and d.role == "main" and d.k > 1
                and d.block and d.block not in labels):
            labels.append(d.block)
    if count < 1:
        raise ParameterError(f"block count must be >= 1, got {count}")
    return set(labels[-count:])


def select_layers(arch: ArchSpec, placement: str) -> List[int]:
    """Indices (into arch.layers) of layers converted under a placement.

    * ``all``: every conv.
    * ``all-but-first``: every main-path conv except the stem; shortcut
      projections stay static.
    * ``all-but-stem``: every conv except the stem, shortcuts included.
    * ``all-1x1`` / ``all-3x3``: the ``all-but-first`` set restricted to
      that kernel extent.
    * ``last-blocks:N``: convs whose block label is among the last N
      distinct labels (shortcuts included).
    * ``condconv-style[:N]``: main-path convs of the trailing N body
      blocks (default 3) plus every fully connected layer; the routing
      families traditionally convert the classifier head as well.
    * ``none``: empty selection.
    """
    base, count = placement, None
    if ":" in placement:
        base, arg = placement.split(":", 1)
        try:
            count = int(arg)
        except ValueError:
            raise ParameterError(f"bad placement count in {placement!r}")
    if base not in PLACEMENTS:
        raise ParameterError(
            f"unknown placement {placement!r}; choose from {PLACEMENTS}")
    if base == "last-blocks" and count is None:
        raise ParameterError("last-blocks needs a count, e.g. last-blocks:6")
    if count is not None and base not in ("last-blocks", "condconv-style"):
        raise ParameterError(f"placement {base!r} takes no count")

    if base == "none":
        return []
    if base == "last-blocks":
        chosen = _last_block_labels(arch, count)
        return [i for i, d in enumerate(arch.layers)
                if d.kind == "conv" and d.block in chosen]
    if base == "condconv-style":
        chosen = _trailing_body_blocks(arch, 3 if count is None else count)
        return [i for i, d in enumerate(arch.layers)
                if (d.kind == "conv" and d.role == "main"
                    and d.block in chosen) or d.kind == "fc"]

    picked = []
    for i, d in enumerate(arch.layers):
        if d.kind != "conv":
            continue
        if base == "all":
            picked.append(i)
            continue
        if d.role == "stem":
            continue
        if base == "all-but-stem":
            picked.append(i)
            continue
        if d.role == "shortcut":
            continue
        if base == "all-but-first":
            picked.append(i)
        elif base == "all-1x1" and d.k == 1:
            picked.append(i)
        elif base == "all-3x3" and d.k == 3:
            picked.append(i)
    return picked


def apply_placement(arch: ArchSpec, dynamic: Optional[DynamicSpec],
                    placement: str) -> ArchSpec:
    """Return a copy of the architecture with converted convs marked."""
    if dynamic is None or placement == "none":
        return ArchSpec(arch.name, arch.input_shape,
                        tuple(replace(d, variant=None) for d in arch.layers))
    chosen = set(select_layers(arch, placement))
    if dynamic.family == "odconv":
        # the four-branch family has no fc form; tail placements keep
        # the classifier static instead of failing
        chosen = {i for i in chosen if arch.layers[i].kind != "fc"}
    layers = [replace(d, variant=dynamic if i in chosen else None)
              for i, d in enumerate(arch.layers)]
    return ArchSpec(arch.name, arch.input_shape, tuple(layers))


def cost_report(arch: ArchSpec, dynamic: Optional[DynamicSpec] = None,
                placement: str = "none") -> CostReport:
    marked = apply_placement(arch, dynamic, placement)
    rows = []
    for i, d in enumerate(marked.layers):
        params, madds = _static_cost(d)
        extra_p = extra_m = 0
        if d.variant is not None:
            extra_p, extra_m = _dynamic_extra(d, d.variant)
        shape = _conv_shape(d) if d.kind == "conv" else f"c{d.c_in}"
        rows.append(LayerCost(i, d.kind, d.role, d.block, shape, params,
                              madds, extra_p, extra_m))
    return CostReport(marked.name, placement, dynamic, tuple(rows))


def count_params(arch: ArchSpec, dynamic: Optional[DynamicSpec] = None,
                 placement: str = "none") -> int:
    return cost_report(arch, dynamic, placement).total_params


def count_madds(arch: ArchSpec, dynamic: Optional[DynamicSpec] = None,
                placement: str = "none") -> int:
    return cost_report(arch, dynamic, placement).total_madds


@dataclass(frozen=True)
class ReferenceResult:
    """Outcome of checking one catalog entry."""

    id: str
    arch: str
    placement: str
    params: int
    madds: int
    params_ref: float
    madds_ref: float
    params_err: float
    madds_err: float
    tol_params: float
    tol_madds: float
    note: str

    @property
    def ok(self):
        return (abs(self.params_err) <= self.tol_params
                and abs(self.madds_err) <= self.tol_madds)


def load_references() -> List[dict]:
    """Entries of the bundled reference catalog."""
    from importlib import resources

    path = resources.files("odconv") / "archs" / "references.json"
    data = json.loads(path.read_text())
    if data.get("version") != 1:
        raise ArchError("unsupported reference catalog version")
    return data["entries"]


def check_references(ids: Optional[List[str]] = None) -> List[ReferenceResult]:
    """Recompute every catalog entry and compare to its reference totals.

    Errors are relative; an entry passes when both stay within its own
    tolerances.  ``ids`` restricts the run to matching entry ids.
    """
    from .archspec import load_zoo_arch

    results = []
    for entry in load_references():
        if ids is not None and entry["id"] not in ids:
            continue
        dyn = entry.get("dynamic")
        spec = None
        if dyn is not None:
            spec = DynamicSpec(dyn["family"], dyn["n"],
                               dyn.get("r", 1.0 / 16.0),
                               dyn.get("hidden_floor", 16))
        arch = load_zoo_arch(entry["arch"])
        p = count_params(arch, spec, entry["placement"])
        m = count_madds(arch, spec, entry["placement"])
        p_ref = entry["params_m"] * 1e6
        m_ref = entry["madds_m"] * 1e6
        results.append(ReferenceResult(
            entry["id"], entry["arch"], entry["placement"], p, m,
            p_ref, m_ref, (p - p_ref) / p_ref, (m - m_ref) / m_ref,
            entry["tol_params"], entry["tol_madds"],
            entry.get("note", "")))
    if ids is not None:
        missing = set(ids) - {r.id for r in results}
        if missing:
            raise ArchError(f"unknown reference ids: {sorted(missing)}")
    return results


def odconv_extra_madds(h: int, w: int, c_in: int, c_out: int, k: int,
                       n: int, r: float, hidden_floor: int = 16) -> int:
    """Closed-form attention overhead of one ungrouped dynamic conv.

    Covers the global average pool, the reduction trunk, every head and
    the kernel-combination arithmetic.  The reduction width enters as the
    exact ratio ``r`` rather than the integer trunk width, so this is the
    smooth analytic form; the integer accounting in ``count_madds`` stays
    within a few percent of it for realistic shapes.  Rounds to nearest.
    """
    if min(h, w, c_in, c_out, k, n) < 1:
        raise ParameterError("extents must be >= 1")
    if not 0.0 < r <= 1.0:
        raise ParameterError(f"reduction ratio must be in (0, 1], got {r}")
    hw = h * w
    if n == 1:
        val = (hw * c_in
               + c_in * (2 * c_in + c_out + k * k) * r
               + k * k * c_in * (1 + 2 * c_out))
    else:
        val = (hw * c_in
               + c_in * (2 * c_in + c_out + k * k + n) * r
               + k * k * c_in * (1 + c_out + 2 * n * c_out))
    return int(val + 0.5)
