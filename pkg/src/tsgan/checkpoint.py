"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"TSGCKPT" + u8 version
    u32 blob count
    per blob: u32 name length, UTF-8 name, u32 ndim, u32 dims..., float32 data
    u32 CRC32 of everything before it

A sidecar ``<path>.json`` holds the config, vocabulary, counters and the
per-parameter Adam step counts.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"TSGCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_blobs(path: str | Path, blobs: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(blobs))]
    for name, arr in blobs.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_blobs(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 9:
        raise CheckpointError(f"{path}: truncated checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if body[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<B", body, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    off = len(MAGIC) + 1
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    blobs = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off:off + n].decode("utf-8")
            off += n
            (ndim,) = struct.unpack_from("<I", body, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            size = int(np.prod(shape)) * 4
            if off + size > len(body):
                raise CheckpointError(f"{path}: truncated blob {name!r}")
            blobs[name] = np.frombuffer(body, dtype="<f4", count=size // 4, offset=off).reshape(shape).astype(np.float32)
            off += size
    except struct.error:
        raise CheckpointError(f"{path}: truncated checkpoint") from None
    if off != len(body):
        raise CheckpointError(f"{path}: trailing bytes after last blob")
    return blobs


def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".json")


def write_sidecar(path: str | Path, meta: dict) -> None:
    sidecar_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_sidecar(path: str | Path) -> dict:
    p = sidecar_path(path)
    if not p.exists():
        raise CheckpointError(f"missing sidecar {p}")
    meta = json.loads(p.read_text(encoding="utf-8"))
    if meta.get("format_version") != VERSION:
        raise CheckpointError(f"{p}: format version {meta.get('format_version')}, expected {VERSION}")
    return meta
