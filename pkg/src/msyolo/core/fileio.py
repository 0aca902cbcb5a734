"""Binary tensor files.

Layout (little-endian)::

    "MST1"          4 bytes magic
    version         u32, always 1
    dtype code      u8, 0 = float32, 1 = float64
    rank            u8
    reserved        2 zero bytes
    extents         rank x u32
    payload         row-major values

Trailing bytes are rejected.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .._atomic import write_bytes_atomic
from .tensor import MAX_RANK, Tensor

MAGIC = b"MST1"
VERSION = 1
HEADER_SIZE = 12
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class TensorFormatError(ValueError):
    pass


def encode_tensor(t: Tensor) -> bytes:
    header = MAGIC + struct.pack("<IBB2x", VERSION, _CODES[t.dtype], t.ndim)
    extents = struct.pack(f"<{t.ndim}I", *t.shape)
    return header + extents + t.data.astype(_DTYPES[_CODES[t.dtype]], copy=False).tobytes(order="C")


def decode_tensor(buf: bytes, source: str = "<bytes>") -> Tensor:
    if len(buf) < HEADER_SIZE:
        raise TensorFormatError(f"{source}: truncated header ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise TensorFormatError(f"{source}: bad magic {buf[:4]!r}")
    version, code, rank = struct.unpack_from("<IBB", buf, 4)
    if version != VERSION:
        raise TensorFormatError(f"{source}: unsupported version {version}")
    if code not in _DTYPES:
        raise TensorFormatError(f"{source}: unknown dtype code {code}")
    if rank > MAX_RANK:
        raise TensorFormatError(f"{source}: rank {rank} exceeds {MAX_RANK}")
    if buf[10:12] != b"\x00\x00":
        raise TensorFormatError(f"{source}: reserved header bytes are not zero")
    off = HEADER_SIZE + 4 * rank
    if len(buf) < off:
        raise TensorFormatError(f"{source}: truncated extents")
    shape = struct.unpack_from(f"<{rank}I", buf, HEADER_SIZE)
    if any(e < 1 for e in shape):
        raise TensorFormatError(f"{source}: zero extent in shape {shape}")
    dt = _DTYPES[code]
    expected = off + int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(buf) < expected:
        raise TensorFormatError(f"{source}: truncated payload ({len(buf)} of {expected} bytes)")
    if len(buf) > expected:
        raise TensorFormatError(f"{source}: {len(buf) - expected} trailing bytes")
    data = np.frombuffer(buf, dtype=dt, offset=off).reshape(shape).astype(dt.newbyteorder("="))
    if not np.isfinite(data).all():
        raise TensorFormatError(f"{source}: payload contains NaN or Inf")
    return Tensor(data)


def save_tensor(path: str | os.PathLike, t: Tensor) -> None:
    write_bytes_atomic(path, encode_tensor(t))


def load_tensor(path: str | os.PathLike) -> Tensor:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read(), str(path))
