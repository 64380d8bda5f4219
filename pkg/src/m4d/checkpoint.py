"""Binary parameter checkpoints.

Layout: 8-byte magic "M4DCKPT\\0", uint32 entry count, then per entry a
uint16 name length, the UTF-8 name (slash-delimited module path), uint8
rank, uint32 extents, and the row-major float64 payload. Everything is
little-endian.
"""
from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"M4DCKPT\x00"


def save_checkpoint(entries, path):
    """entries: iterable of (name, array-like) pairs, order preserved."""
    with open(path, "wb") as f:
        items = [(name, np.asarray(arr, dtype=np.float64)) for name, arr in entries]
        f.write(MAGIC)
        f.write(struct.pack("<I", len(items)))
        for name, arr in items:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns an OrderedDict name -> float64 ndarray."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic")
    off = 8
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    out = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        out[name] = np.array(arr)
    return out
