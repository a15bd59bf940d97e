"""OBZT binary tensor codec.

Layout (all little-endian):

    bytes 0-3   magic "OBZT"
    byte  4     version, must be 1
    byte  5     dtype, must be 1 (IEEE-754 float32)
    byte  6     ndim, 1..4
    byte  7     reserved, must be 0
    next        ndim x uint32 dims
    rest        row-major float32 payload, exactly prod(dims) values

Decoding is strict: any deviation raises CorruptTensor with the byte offset
of the defect, never a crash or silently wrong data.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CorruptTensor, InvalidInput

MAGIC = b"OBZT"
VERSION = 1
DTYPE_FLOAT32 = 1
MAX_NDIM = 4
HEADER_LEN = 8


def encode_tensor(dims, values) -> bytes:
    """Encode a float32 tensor. `values` is flattened row-major to prod(dims)."""
    dims = tuple(int(d) for d in dims)
    if not 1 <= len(dims) <= MAX_NDIM:
        raise InvalidInput(f"ndim must be 1..{MAX_NDIM}, got {len(dims)}")
    if any(d <= 0 for d in dims):
        raise InvalidInput(f"dims must be positive, got {dims}")
    arr = np.asarray(values, dtype=np.float32).reshape(-1)
    count = int(np.prod([float(d) for d in dims]))
    if arr.size != count:
        raise InvalidInput(f"expected {count} values for dims {dims}, got {arr.size}")
    if not np.isfinite(arr).all():
        raise InvalidInput("tensor values must be finite")

    header = MAGIC + struct.pack("<BBBB", VERSION, DTYPE_FLOAT32, len(dims), 0)
    dim_words = struct.pack(f"<{len(dims)}I", *dims)
    payload = arr.astype("<f4").tobytes()
    return header + dim_words + payload


def decode_tensor(data: bytes) -> tuple[tuple[int, ...], np.ndarray]:
    """Decode OBZT bytes into (dims, row-major float32 array of that shape)."""
    if len(data) < HEADER_LEN:
        raise CorruptTensor(f"truncated header: {len(data)} bytes", offset=len(data))
    if data[0:4] != MAGIC:
        raise CorruptTensor(f"bad magic {data[0:4]!r}", offset=0)
    version, dtype, ndim, reserved = struct.unpack("<BBBB", data[4:8])
    if version != VERSION:
        raise CorruptTensor(f"unsupported version {version}", offset=4)
    if dtype != DTYPE_FLOAT32:
        raise CorruptTensor(f"unsupported dtype {dtype}", offset=5)
    if not 1 <= ndim <= MAX_NDIM:
        raise CorruptTensor(f"ndim {ndim} outside 1..{MAX_NDIM}", offset=6)
    if reserved != 0:
        raise CorruptTensor(f"reserved byte is {reserved}", offset=7)

    dims_end = HEADER_LEN + 4 * ndim
    if len(data) < dims_end:
        raise CorruptTensor("truncated dims", offset=len(data))
    dims = struct.unpack(f"<{ndim}I", data[HEADER_LEN:dims_end])
    for i, d in enumerate(dims):
        if d == 0:
            raise CorruptTensor(f"dim {i} is zero", offset=HEADER_LEN + 4 * i)

    count = 1
    for d in dims:
        count *= d
    expected = dims_end + 4 * count
    if len(data) < expected:
        raise CorruptTensor(
            f"truncated payload: need {expected} bytes, got {len(data)}", offset=len(data)
        )
    if len(data) > expected:
        raise CorruptTensor(f"{len(data) - expected} trailing bytes", offset=expected)

    arr = np.frombuffer(data[dims_end:], dtype="<f4")
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise CorruptTensor("non-finite payload value", offset=dims_end + 4 * int(bad[0]))
    return dims, arr.reshape(dims).copy()
