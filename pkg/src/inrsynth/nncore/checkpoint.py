"""CKPT1: a flat list of named float32 arrays.

Layout: 8-byte magic ``CKPT1\\0\\0\\0``, uint32 array count, then per array a
uint32 name length, UTF-8 name, uint32 rank, ``rank`` uint32 dims and the
float32 payload. All integers little-endian.
"""
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"CKPT1\0\0\0"


def save_ckpt(path, arrays):
    chunks = [MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f4")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)) + raw_name)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_ckpt(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError("magic", f"expected {MAGIC!r}")
    pos = len(MAGIC)

    def take(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(what, "truncated checkpoint")
        out = raw[pos:pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4, "count"))
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name_length"))
        name = take(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, f"{name}.rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, f"{name}.dims"))
        size = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(take(4 * size, f"{name}.payload"), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(raw):
        raise FormatError("payload", f"{len(raw) - pos} trailing bytes")
    return arrays
