"""NTF1 tensor checkpoints.

Layout (all integers little-endian)::

    b"NTF1"
    u32  tensor count
    per tensor:
        u16  name length, then the UTF-8 name
        u8   rank, then one u32 per dimension
        f32  values, row-major

Metadata (model variant and config) is stored as the first tensor, named
``__meta__``: a rank-1 tensor whose values are the bytes of a JSON document,
one byte per float.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NTF1"
META_NAME = "__meta__"


class CheckpointError(ValueError):
    pass


def _encode_meta(meta: dict) -> np.ndarray:
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float32)


def _decode_meta(arr: np.ndarray) -> dict:
    return json.loads(bytes(arr.astype(np.uint8).tolist()).decode("utf-8"))


def dumps(tensors: dict, meta: dict | None = None) -> bytes:
    items = list(tensors.items())
    if meta is not None:
        items.insert(0, (META_NAME, _encode_meta(meta)))
    out = [MAGIC, struct.pack("<I", len(items))]
    for name, arr in items:
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"tensor {name!r} cannot be encoded")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def loads(buf: bytes):
    """Parse a checkpoint; returns ``(tensors, meta)`` with float32 arrays."""
    if buf[:4] != MAGIC:
        raise CheckpointError("not an NTF1 checkpoint (bad magic)")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError("truncated checkpoint")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    tensors, meta = {}, None
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
        if name == META_NAME:
            meta = _decode_meta(arr)
        else:
            tensors[name] = arr
    if pos != len(buf):
        raise CheckpointError("trailing bytes after the last tensor")
    return tensors, meta


def save(path, tensors: dict, meta: dict | None = None):
    Path(path).write_bytes(dumps(tensors, meta))


def load(path):
    return loads(Path(path).read_bytes())
