"""PMT1: tiny little-endian binary tensor container.

Layout: magic ``PMT1`` | dtype u8 (0: f32, 1: f64, 2: u8) | ndim u8 |
ndim x u32 dims | row-major payload.  Round trips are bitwise lossless.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid

MAGIC = b"PMT1"

_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_DTYPE_TO_CODE = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("u1"): 2}


def dumps(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    # ascontiguousarray promotes 0-d to 1-d; restore the original shape
    arr = np.ascontiguousarray(arr).reshape(arr.shape)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if dt not in _DTYPE_TO_CODE:
        raise ConfigInvalid(f"unsupported dtype for PMT1: {arr.dtype}")
    arr = arr.astype(dt, copy=False)
    head = MAGIC + struct.pack("<BB", _DTYPE_TO_CODE[dt], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def loads(data: bytes) -> np.ndarray:
    if data[:4] != MAGIC:
        raise ConfigInvalid("not a PMT1 payload (bad magic)")
    code, ndim = struct.unpack_from("<BB", data, 4)
    if code not in _CODE_TO_DTYPE:
        raise ConfigInvalid(f"unknown PMT1 dtype code {code}")
    dims = struct.unpack_from(f"<{ndim}I", data, 6)
    dt = _CODE_TO_DTYPE[code]
    off = 6 + 4 * ndim
    n = int(np.prod(dims)) if ndim else 1
    expect = n * dt.itemsize
    payload = data[off : off + expect]
    if len(payload) != expect:
        raise ConfigInvalid("PMT1 payload length does not match dims")
    return np.frombuffer(payload, dtype=dt).reshape(dims).copy()


def write_tensor(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(dumps(arr))


def read_tensor(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
