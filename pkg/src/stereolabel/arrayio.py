"""Minimal cross-language array interchange format.

Layout (all little-endian):

    bytes 0-3   magic ``SLAR``
    byte  4     format version (1)
    byte  5     number of dimensions
    next  4*n   uint32 dimensions
    rest        float32 data, C order

Used for heatmap grids and other dense interchange so implementations in
any language can exchange test vectors without a serialization library.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SLAR"
VERSION = 1


def save_array(arr: np.ndarray, path: str | Path) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim > 255:
        raise ValueError("too many dimensions")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def load_array(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not an array file (bad magic)")
    version, ndim = struct.unpack_from("<BB", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    shape = struct.unpack_from(f"<{ndim}I", blob, 6)
    offset = 6 + 4 * ndim
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    if len(blob) - offset != expected:
        raise ValueError(f"{path}: payload size mismatch")
    data = np.frombuffer(blob, dtype="<f4", offset=offset).reshape(shape)
    return data.astype(np.float64)
