"""Binary tensor format: ``b"MMTD"``, dtype code (u8), rank (u8), extents (u64 each),
then the row-major little-endian payload."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from ..errors import CheckpointError

MAGIC = b"MMTD"
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_DTYPES = {v: k for k, v in _CODES.items()}


def tensor_to_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype not in _CODES:
        raise CheckpointError(f"cannot serialise dtype {array.dtype}")
    header = MAGIC + struct.pack("<BB", _CODES[array.dtype], array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")).tobytes()
    return header + payload


def tensor_from_bytes(buf: bytes, offset: int = 0) -> "tuple[np.ndarray, int]":
    """Decode one tensor starting at ``offset``; returns it with the offset just past it."""
    try:
        if buf[offset : offset + 4] != MAGIC:
            raise CheckpointError("bad tensor magic")
        code, rank = struct.unpack_from("<BB", buf, offset + 4)
        dtype = _DTYPES.get(code)
        if dtype is None:
            raise CheckpointError(f"unknown dtype code {code}")
        pos = offset + 6
        shape = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        count = int(np.prod(shape)) if rank else 1
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(buf):
            raise CheckpointError("truncated tensor payload")
        arr = np.frombuffer(buf, dtype=dtype.newbyteorder("<"), count=count, offset=pos)
        return arr.astype(dtype).reshape(shape), pos + nbytes
    except struct.error as exc:
        raise CheckpointError(f"truncated tensor header: {exc}") from None


def write_tensor(fp: BinaryIO, array: np.ndarray) -> int:
    data = tensor_to_bytes(array)
    fp.write(data)
    return len(data)


def read_tensor(fp: BinaryIO) -> np.ndarray:
    head = fp.read(6)
    if len(head) < 6:
        raise CheckpointError("truncated tensor header")
    rank = head[5]
    extents = fp.read(8 * rank)
    shape = struct.unpack(f"<{rank}Q", extents) if len(extents) == 8 * rank else None
    if shape is None:
        raise CheckpointError("truncated tensor header")
    code = head[4]
    dtype = _DTYPES.get(code)
    if dtype is None:
        raise CheckpointError(f"unknown dtype code {code}")
    payload = fp.read(int(np.prod(shape)) * dtype.itemsize if rank else dtype.itemsize)
    arr, _ = tensor_from_bytes(head + extents + payload)
    return arr
