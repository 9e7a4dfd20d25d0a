"""Versioned, bit-exact checkpoint files.

Binary layout (all integers little-endian, all floats IEEE-754 binary64
little-endian; byte-exact reference in docs/formats.md):

============  =======  ====================================================
offset        size     field
============  =======  ====================================================
0             6        magic ``b"ODCKPT"``
6             2        format version, uint16 (currently 1)
8             32       topology digest, raw SHA-256
40            8        epochs completed, int64
48            8        temperature at save time, float64
56            8        config block length ``L``, uint64
64            L        model config text, UTF-8
64+L          ...      parameter section, then optimizer section
============  =======  ====================================================

Parameter section: uint64 record count, then per record a uint32 name
length, the UTF-8 name, a uint8 rank, rank uint64 extents, and the row-major
float64 payload.  Optimizer section: one flag byte; when 1, float64
learning rate / momentum / weight decay followed by velocity records in
the same record format.

The digest is SHA-256 over the config text and the ordered (name, shape)
list, so any drift in topology or parameter naming is caught before any
tensor is deserialized.  Loading rebuilds the model from the embedded
config and fails with TopologyError rather than partially loading.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import FormatError, TopologyError
from .model import SequentialModel, model_from_config
from .training import OptimizerState

MAGIC = b"ODCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """A deserialized checkpoint: rebuilt model plus training context."""

    model: SequentialModel
    epoch: int
    temperature: float
    optimizer: Optional[OptimizerState]


def topology_digest(config: str, named_shapes) -> bytes:
    """SHA-256 over the config text and the ordered (name, shape) list."""
    h = hashlib.sha256()
    h.update(config.encode("utf-8"))
    h.update(b"\x00")
    for name, shape in named_shapes:
        h.update(name.encode("utf-8"))
        h.update(b"\x00")
        h.update(struct.pack("<B", len(shape)))
        h.update(struct.pack(f"<{len(shape)}Q", *shape))
    return h.digest()


def model_digest(model: SequentialModel) -> bytes:
    named = [(name, arr.shape) for name, arr in model.named_parameters()]
    return topology_digest(model.config_string(), named)


def _write_record(out, name: str, arr: np.ndarray):
    encoded = name.encode("utf-8")
    out.append(struct.pack("<I", len(encoded)))
    out.append(encoded)
    out.append(struct.pack("<B", arr.ndim))
    out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Reader:
    """Cursor over the file bytes; every read checks for truncation."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise FormatError(
                f"truncated checkpoint: wanted {count} bytes at offset "
                f"{self.pos}, file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def i64(self):
        return struct.unpack("<q", self.take(8))[0]

    def f64(self):
        return struct.unpack("<d", self.take(8))[0]


def _read_record(r: _Reader):
    name = r.take(r.u32()).decode("utf-8")
    rank = r.u8()
    shape = tuple(r.u64() for _ in range(rank))
    count = 1
    for extent in shape:
        count *= extent
    payload = r.take(8 * count)
    arr = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return name, arr


def save_checkpoint(model: SequentialModel, path: str, epoch: int = 0,
                    temperature: float = 1.0,
                    optimizer: Optional[OptimizerState] = None) -> None:
    """Write the binary checkpoint and its JSON sidecar (path + ".json")."""
    config = model.config_string()
    named = list(model.named_parameters())
    digest = topology_digest(config, [(n, a.shape) for n, a in named])

    out = [MAGIC, struct.pack("<H", FORMAT_VERSION), digest,
           struct.pack("<q", epoch), struct.pack("<d", temperature)]
    encoded = config.encode("utf-8")
    out.append(struct.pack("<Q", len(encoded)))
    out.append(encoded)

    out.append(struct.pack("<Q", len(named)))
    for name, arr in named:
        _write_record(out, name, arr)

    if optimizer is None:
        out.append(b"\x00")
    else:
        out.append(b"\x01")
        out.append(struct.pack("<ddd", optimizer.learning_rate,
                               optimizer.momentum, optimizer.weight_decay))
        vel = sorted(optimizer.velocity.items())
        out.append(struct.pack("<Q", len(vel)))
        for name, arr in vel:
            _write_record(out, name, arr)

    with open(path, "wb") as f:
        f.write(b"".join(out))

    sidecar = {
        "format_version": FORMAT_VERSION,
        "digest": digest.hex(),
        "epoch": epoch,
        "temperature": temperature,
        "config": config,
        "parameters": [{"name": n, "shape": list(a.shape)}
                       for n, a in named],
        "optimizer": None if optimizer is None else {
            "learning_rate": optimizer.learning_rate,
            "momentum": optimizer.momentum,
            "weight_decay": optimizer.weight_decay,
            "velocities": sorted(optimizer.velocity),
        },
    }
    with open(path + ".json", "w") as f:
        json.dump(sidecar, f, indent=2)
        f.write("\n")


def load_checkpoint(path: str) -> Checkpoint:
    """Rebuild the model from a checkpoint file.

    The embedded config reconstructs the topology; the digest guards
    against drift between the config, the record list, and the loader's
    own builders.  Every parameter is restored bitwise.
    """
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)

    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("bad magic bytes; not a checkpoint file")
    version = struct.unpack("<H", r.take(2))[0]
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    digest = r.take(32)
    epoch = r.i64()
    temperature = r.f64()
    config = r.take(r.u64()).decode("utf-8")

    count = r.u64()
    records = [_read_record(r) for _ in range(count)]

    stored = topology_digest(config, [(n, a.shape) for n, a in records])
    if stored != digest:
        raise TopologyError(
            "topology digest mismatch: header does not cover the stored "
            "config and parameter records")

    model = model_from_config(config)
    expected = model_digest(model)
    if expected != digest:
        raise TopologyError(
            "topology digest mismatch: rebuilt model disagrees with the "
            "checkpoint layout")

    names = {name for name, _ in model.named_parameters()}
    for name, arr in records:
        if name not in names:
            raise TopologyError(f"checkpoint names unknown parameter {name}")
        model.set_parameter(name, arr)

    optimizer = None
    if r.u8() == 1:
        lr, momentum, wd = struct.unpack("<ddd", r.take(24))
        vel_count = r.u64()
        velocity = {}
        for _ in range(vel_count):
            name, arr = _read_record(r)
            if name not in names:
                raise TopologyError(
                    f"optimizer state names unknown parameter {name}")
            velocity[name] = arr
        optimizer = OptimizerState(lr, momentum, wd, velocity)

    if r.pos != len(data):
        raise FormatError(
            f"{len(data) - r.pos} trailing bytes after checkpoint payload")
    return Checkpoint(model, epoch, temperature, optimizer)
