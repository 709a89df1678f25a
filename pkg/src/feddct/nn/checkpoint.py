"""Parameter checkpoint format.

Layout (all integers little-endian)::

    magic      4 bytes  b"FDCK"
    version    u32      1
    count      u32      number of records
    record*    repeated ``count`` times:
        id_len u32, id utf-8 bytes,
        ndim   u32, dims u64 * ndim,
        values f64 little-endian * prod(dims), row-major

Records are written in the order given (model parameter order), so two
checkpoints of the same parameters compare equal byte for byte.
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"FDCK"
VERSION = 1


def dumps(state: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(state)))
    for pid, value in state.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        raw_id = pid.encode("utf-8")
        buf.write(struct.pack("<I", len(raw_id)))
        buf.write(raw_id)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise ValueError("not a parameter checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 12
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (n,) = struct.unpack_from("<I", view, pos)
        pos += 4
        pid = bytes(view[pos : pos + n]).decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", view, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", view, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[pid] = np.frombuffer(view, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(blob):
        raise ValueError(f"trailing bytes in checkpoint ({len(blob) - pos})")
    return out


def save(path, state: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(state))


def load(path) -> "OrderedDict[str, np.ndarray]":
    return loads(Path(path).read_bytes())
