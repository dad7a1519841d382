"""FTEN tensor files.

Layout (little-endian)::

    bytes 0-3   magic b"FTEN"
    u32         version (1)
    u32         dtype code (1 = float32, 2 = float64)
    u32         ndim (4)
    4 x u32     dims n, c, h, w
    payload     raw row-major elements
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import BadMagic, FtenError, NonFiniteData, TruncatedFile

MAGIC = b"FTEN"
VERSION = 1
HEADER = struct.Struct("<4sIII4I")
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
CODE_FOR_DTYPE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def encode_tensor(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    if t.ndim != 4:
        raise FtenError(f"FTEN stores rank-4 tensors, got shape {t.shape}")
    try:
        code = CODE_FOR_DTYPE[t.dtype]
    except KeyError:
        raise FtenError(f"unsupported dtype {t.dtype}") from None
    if not np.all(np.isfinite(t)):
        raise NonFiniteData("refusing to write a tensor containing NaN or Inf")
    header = HEADER.pack(MAGIC, VERSION, code, 4, *t.shape)
    return header + np.ascontiguousarray(t, dtype=DTYPE_CODES[code]).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < HEADER.size:
        raise TruncatedFile(f"header needs {HEADER.size} bytes, file has {len(buf)}")
    _, version, code, ndim, *dims = HEADER.unpack_from(buf)
    if version != VERSION:
        raise FtenError(f"unsupported FTEN version {version}")
    if code not in DTYPE_CODES:
        raise FtenError(f"unknown dtype code {code}")
    if ndim != 4:
        raise FtenError(f"ndim must be 4, got {ndim}")
    dtype = DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64))
    payload = len(buf) - HEADER.size
    if payload < count * dtype.itemsize:
        raise TruncatedFile(
            f"header declares {'x'.join(map(str, dims))} = {count} elements, "
            f"payload holds {payload // dtype.itemsize}"
        )
    if payload > count * dtype.itemsize:
        raise FtenError(f"{payload - count * dtype.itemsize} trailing bytes after payload")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=HEADER.size).reshape(dims)
    if not np.all(np.isfinite(data)):
        raise NonFiniteData("tensor contains NaN or Inf")
    return data.astype(dtype.newbyteorder("="))


def write_tensor(path: str | os.PathLike, t: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_tensor(t))


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_tensor(f.read())
