"""Versioned binary checkpoint files: magic, header JSON, named arrays.

Layout (all integers little-endian):

    8 bytes   magic  b"FGCKPT01"
    u32       format version
    u64       header length, then UTF-8 JSON header
    u32       array count, then per array:
        u16   name length, then UTF-8 name
        u8    dtype code (0 = f32, 1 = f64, 2 = i64)
        u8    ndim, then ndim * u64 dims
        raw little-endian data

Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FGCKPT01"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, header: dict,
                    arrays: dict[str, np.ndarray]) -> None:
    """Write atomically (temp file + rename)."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    hdr = json.dumps(header, sort_keys=True).encode()
    chunks.append(struct.pack("<Q", len(hdr)))
    chunks.append(hdr)
    chunks.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype not in _CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        code = _CODES[arr.dtype]
        nb = name.encode()
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype(_DTYPES[code], copy=False).tobytes())
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        buf = f.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = buf[off:off + n]
        off += n
        return out

    if take(8) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (hlen,) = struct.unpack("<Q", take(8))
    header = json.loads(take(hlen).decode())
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        dtype = _DTYPES[code]
        n_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = take(n_items * dtype.itemsize)
        arrays[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    return header, arrays


def require_config_hash(header: dict, expected: str, path) -> None:
    got = header.get("config_hash")
    if got != expected:
        raise CheckpointError(
            f"{path}: config hash mismatch (file {got}, current {expected}); "
            "refusing to mix artifacts across configurations")
