"""Binary checkpoint format.

Layout (little-endian)::

    b"TASC"                 magic
    u16                     format version
    u32 + bytes             network spec as UTF-8 JSON (self-describing layer records)
    u32                     layer count
    per layer:
      u16                   array count
      per array:
        u16 + bytes         array name (e.g. "W", "acc:W")
        u8                  ndim
        u32 * ndim          dims
        f64 * prod(dims)    row-major data

Parameters are written as stored and accumulators under an ``acc:`` prefix,
so a save/load round trip is bit-exact.
"""

import json
import struct

import numpy as np

from ..errors import BadMagic, CheckpointError, TruncatedFile
from .model import ModelState
from .spec import NetworkSpec, layer_shapes

MAGIC = b"TASC"
VERSION = 1


def dumps(model, spec):
    out = bytearray(MAGIC)
    out += struct.pack("<H", VERSION)
    blob = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    out += struct.pack("<I", len(blob)) + blob
    out += struct.pack("<I", len(model.params))
    for p, acc in zip(model.params, model.accum):
        arrays = [(k, v) for k, v in sorted(p.items())]
        arrays += [("acc:" + k, v) for k, v in sorted(acc.items())]
        out += struct.pack("<H", len(arrays))
        for name, arr in arrays:
            raw = name.encode()
            arr = np.ascontiguousarray(arr, dtype="<f8")
            out += struct.pack("<H", len(raw)) + raw
            out += struct.pack("<B", arr.ndim)
            out += struct.pack(f"<{arr.ndim}I", *arr.shape)
            out += arr.tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"checkpoint ends at byte {len(self.buf)}, needed {self.pos + n}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf):
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise BadMagic("not a tascforge checkpoint")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = r.unpack("<I")
    spec = NetworkSpec.from_dict(json.loads(r.take(n).decode()))
    (n_layers,) = r.unpack("<I")
    if n_layers != len(spec.layers):
        raise CheckpointError("layer count disagrees with the stored spec")
    params, accum = [], []
    for _ in range(n_layers):
        p, acc = {}, {}
        (n_arrays,) = r.unpack("<H")
        for _ in range(n_arrays):
            (ln,) = r.unpack("<H")
            name = r.take(ln).decode()
            (ndim,) = r.unpack("<B")
            dims = r.unpack(f"<{ndim}I")
            count = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
            if name.startswith("acc:"):
                acc[name[4:]] = arr
            else:
                p[name] = arr
        params.append(p)
        accum.append(acc)
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint payload")
    layer_shapes(spec)
    return ModelState(params, accum), spec


def save(path, model, spec):
    with open(path, "wb") as fh:
        fh.write(dumps(model, spec))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
