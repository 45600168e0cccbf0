"""DAFN1: a small self-describing binary container for named arrays.

Layout (all integers little-endian)::

    b"DAFN"  u32 version(=1)  u32 count
    count x { u16 name_len, name (utf-8), u8 dtype, u8 rank, rank x u64 extent, payload }

Payloads are row-major little-endian with no padding. Dtype codes:
1 real32, 2 real64, 3 uint8, 4 complex128.
"""

from __future__ import annotations

import io
import json
import os
import struct

import numpy as np

__all__ = [
    "ContainerError",
    "MagicMismatchError",
    "TruncatedFileError",
    "UnknownDTypeError",
    "write_container",
    "read_container",
    "to_bytes",
    "from_bytes",
    "encode_json",
    "decode_json",
]

MAGIC = b"DAFN"
VERSION = 1

_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1"), 4: np.dtype("<c16")}


class ContainerError(ValueError):
    """Base class for malformed container files."""


class MagicMismatchError(ContainerError):
    pass


class TruncatedFileError(ContainerError):
    pass


class UnknownDTypeError(ContainerError):
    pass


def _code_for(arr: np.ndarray) -> int:
    for code, dt in _CODES.items():
        if arr.dtype.kind == dt.kind and arr.dtype.itemsize == dt.itemsize:
            return code
    raise UnknownDTypeError(f"dtype {arr.dtype} has no container code")


def encode_json(obj) -> np.ndarray:
    """JSON document as a uint8 array (for ``meta``/``config`` entries)."""
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).copy()


def decode_json(arr) -> object:
    return json.loads(np.asarray(arr, dtype=np.uint8).tobytes().decode("utf-8"))


def to_bytes(arrays: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name, value in arrays.items():
        arr = np.asarray(value)
        code = _code_for(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"array name too long: {name[:40]}...")
        if arr.ndim > 255:
            raise ValueError(f"{name}: rank {arr.ndim} exceeds 255")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes())
    return buf.getvalue()


def from_bytes(data: bytes) -> dict:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise TruncatedFileError(f"file ends at byte {len(view)}, needed {pos + n}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if len(view) < 4 or bytes(view[:4]) != MAGIC:
        raise MagicMismatchError(f"bad magic {bytes(view[:4])!r}, expected {MAGIC!r}")
    pos = 4
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        if code not in _CODES:
            raise UnknownDTypeError(f"{name}: unknown dtype code {code}")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        dt = _CODES[code]
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(bytes(take(n)), dtype=dt).reshape(shape)
        out[name] = arr.astype(dt.newbyteorder("="), copy=True)
    return out


def write_container(path, arrays: dict) -> None:
    """Write ``arrays`` (name -> ndarray) to ``path`` atomically."""
    data = to_bytes(arrays)
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_container(path) -> dict:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
