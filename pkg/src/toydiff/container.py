"""Versioned binary container for float64 arrays.

Byte layout (all integers little-endian)::

    magic      8 bytes   b"TOYDIFF\\0"
    kind       4 bytes   ASCII tag: b"CKPT", b"TRAJ", b"PTRK" or b"LATS"
    version    u32
    meta_len   u32       length of the UTF-8 JSON metadata block
    meta       meta_len bytes
    n_arrays   u32
    shape table, one entry per array:
        name_len u16, name (UTF-8), ndim u8, ndim x u64 extents
    data       raw little-endian float64 values, arrays in table order,
               each in row-major order

Every payload is float64, so a write/read round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TOYDIFF\x00"
VERSION = 1


class ContainerError(ValueError):
    """Malformed, truncated, or mismatched container file."""


def write_container(path, kind: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    if len(kind) != 4:
        raise ValueError("kind tag must be 4 bytes")
    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
    out = bytearray()
    out += MAGIC + kind + struct.pack("<II", VERSION, len(meta_b)) + meta_b
    out += struct.pack("<I", len(arrays))
    payload = []
    for name, arr in arrays.items():
        arr = np.array(arr, dtype="<f8", order="C")  # keeps 0-d arrays 0-d
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        payload.append(arr.tobytes(order="C"))
    out += b"".join(payload)
    Path(path).write_bytes(bytes(out))


def read_container(path, kind: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ContainerError(f"{path}: bad magic {buf[:8]!r}")
    if buf[8:12] != kind:
        raise ContainerError(f"{path}: expected a {kind!r} container, found {buf[8:12]!r}")
    try:
        version, meta_len = struct.unpack_from("<II", buf, 12)
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported format version {version} (expected {VERSION})")
        pos = 20
        meta = json.loads(buf[pos : pos + meta_len].decode("utf-8"))
        pos += meta_len
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        table = []
        for _ in range(n):
            (nl,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos : pos + nl].decode("utf-8")
            pos += nl
            (nd,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{nd}Q", buf, pos)
            pos += 8 * nd
            table.append((name, shape))
        arrays = {}
        for name, shape in table:
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count > len(buf):
                raise ContainerError(f"{path}: truncated data for array {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
            pos += 8 * count
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt container ({exc})") from exc
    if pos != len(buf):
        raise ContainerError(f"{path}: {len(buf) - pos} trailing bytes")
    return meta, arrays
