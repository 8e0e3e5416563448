"""Named-tensor checkpoint container.

Layout (little-endian): magic "CAAP", version u32, tensor count u32, then
per tensor: name length u16, UTF-8 name, rank u8, extents u32 each, f32
payload in row-major order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import F32

MAGIC = b"CAAP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=F32)
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", arr.ndim)
        for extent in arr.shape:
            out += struct.pack("<I", extent)
        out += arr.astype("<f4", copy=False).tobytes()
    Path(path).write_bytes(bytes(out))


def load_tensors(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", blob, pos) if rank else ()
        pos += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos)
        pos += 4 * size
        tensors[name] = arr.reshape(shape).astype(F32)
    if pos != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after tensor data")
    return tensors
