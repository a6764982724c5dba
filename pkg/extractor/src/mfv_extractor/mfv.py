"""MFV1 tensor files: the interchange format the relevance scorer reads.

Layout, all little-endian:

    offset 0   magic ``MFV1`` (4 bytes)
    offset 4   rank, u8, 1 <= rank <= 3
    offset 5   rank dims, u32 each, every dim >= 1
    then       prod(dims) float32 values, row-major

File length must be exactly 4 + 1 + 4*rank + 4*prod(dims). This module is
write-focused; decode exists so tests can round-trip without the consumer
installed.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import ExtractorError

MAGIC = b"MFV1"

Array = np.ndarray


def mfv_encode(values: Array) -> bytes:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim < 1 or arr.ndim > 3:
        raise ExtractorError(f"MFV1 holds rank 1..3, got rank {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise ExtractorError(f"MFV1 dims must all be >= 1, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ExtractorError("refusing to write non-finite values")
    arr = np.ascontiguousarray(arr)
    header = MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.astype("<f4").tobytes(order="C")


def mfv_decode(blob: bytes) -> Array:
    if len(blob) < 5 or blob[:4] != MAGIC:
        raise ExtractorError(f"not an MFV1 blob: {blob[:4]!r}")
    rank = blob[4]
    if not (1 <= rank <= 3):
        raise ExtractorError(f"rank {rank} outside 1..3")
    dims_end = 5 + 4 * rank
    dims = struct.unpack(f"<{rank}I", blob[5:dims_end])
    count = int(np.prod(dims))
    if len(blob) != dims_end + 4 * count:
        raise ExtractorError(f"payload length mismatch for dims {dims}")
    payload = np.frombuffer(blob, dtype="<f4", count=count, offset=dims_end)
    return payload.astype(np.float64).reshape(dims)


def write_mfv_atomic(path: str | Path, values: Array) -> None:
    """Write-then-rename so readers never observe a partial file."""
    path = Path(path)
    tmp = path.parent / (path.name + ".tmp")
    tmp.write_bytes(mfv_encode(values))
    os.replace(tmp, path)
