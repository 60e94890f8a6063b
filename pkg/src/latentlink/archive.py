"""Binary tensor-archive format for checkpoints.

Layout (all integers little-endian):

    magic           6 bytes   b"LDARM1"
    version         u16       currently 1
    entry_count     u32
    per entry:
        name_len    u16
        name        utf-8 bytes
        dtype_code  u8        0=float32 1=float64 2=int64 3=raw bytes (u8)
        ndim        u8
        dims        u32 * ndim
        payload     raw little-endian buffer
    checksum        u32       crc32 of every preceding byte

Entries keep insertion order, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"LDARM1"
VERSION = 1

_DTYPE_CODES = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.int64): 2,
    np.dtype(np.uint8): 3,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class ArchiveError(ValueError):
    """Corrupt, truncated, or unsupported archive."""


def save_archive(path: str | Path, entries: dict[str, np.ndarray]) -> None:
    """Write named arrays; dict order is the on-disk order."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<H", VERSION)
    blob += struct.pack("<I", len(entries))
    for name, arr in entries.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            raise ArchiveError(f"unsupported dtype {arr.dtype} for entry {name!r}")
        name_b = name.encode("utf-8")
        blob += struct.pack("<H", len(name_b))
        blob += name_b
        blob += struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob += little.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(blob))


def load_archive(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 2 + 4 + 4:
        raise ArchiveError("archive truncated")
    if raw[: len(MAGIC)] != MAGIC:
        raise ArchiveError("bad magic")
    body, (checksum,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != checksum:
        raise ArchiveError("checksum mismatch")
    offset = len(MAGIC)
    (version,) = struct.unpack_from("<H", body, offset)
    offset += 2
    if version != VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    (count,) = struct.unpack_from("<I", body, offset)
    offset += 4
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, offset)
        offset += 2
        name = body[offset:offset + name_len].decode("utf-8")
        offset += name_len
        dtype_code, ndim = struct.unpack_from("<BB", body, offset)
        offset += 2
        if dtype_code not in _CODE_DTYPES:
            raise ArchiveError(f"unknown dtype code {dtype_code}")
        dims = struct.unpack_from(f"<{ndim}I", body, offset)
        offset += 4 * ndim
        dtype = _CODE_DTYPES[dtype_code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        payload = body[offset:offset + nbytes]
        if len(payload) != nbytes:
            raise ArchiveError(f"entry {name!r} truncated")
        offset += nbytes
        arr = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype)
        entries[name] = arr.reshape(dims)
    if offset != len(body):
        raise ArchiveError("trailing bytes after last entry")
    return entries


def pack_json(obj) -> np.ndarray:
    """Encode a JSON-serializable object as a raw-bytes entry."""
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).copy()


def unpack_json(arr: np.ndarray):
    return json.loads(arr.tobytes().decode("utf-8"))
