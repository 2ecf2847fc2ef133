"""NTF tensor container.

Layout: ``b"NTF1"``, u8 dtype code (1 = float32, 2 = float64), u8 rank,
``rank`` little-endian u64 dims, then the row-major little-endian payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ContractError

MAGIC = b"NTF1"
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def dumps(arr) -> bytes:
    arr = np.asarray(getattr(arr, "data", arr))
    code = _DTYPE_TO_CODE.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise ContractError(f"NTF stores float32/float64 only, got {arr.dtype}")
    if arr.ndim > 255:
        raise ContractError("NTF rank is limited to 255")
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes()


def loads(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ContractError("not an NTF1 payload (bad magic)")
    if len(buf) < 6:
        raise ContractError("truncated NTF header")
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in _CODES:
        raise ContractError(f"unknown NTF dtype code {code}")
    offset = 6 + 8 * rank
    if len(buf) < offset:
        raise ContractError("truncated NTF header")
    shape = struct.unpack_from(f"<{rank}Q", buf, 6)
    dtype = _CODES[code]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    if len(buf) != offset + count * dtype.itemsize:
        raise ContractError(
            f"NTF payload is {len(buf) - offset} bytes, expected {count * dtype.itemsize}"
        )
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(shape)
    return arr.astype(dtype.newbyteorder("="))


def save(path, arr) -> None:
    Path(path).write_bytes(dumps(arr))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
