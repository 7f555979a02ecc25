"""Self-describing checkpoint container.

Layout: 8-byte magic, uint32 header length, UTF-8 JSON header (format
version, tensor names and shapes in payload order, free-form metadata), then
the little-endian float32 payloads.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SGSGCKPT"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = [{"name": n, "shape": list(np.shape(a))} for n, a in tensors.items()]
    header = json.dumps({"version": VERSION, "tensors": entries, "meta": meta or {}},
                        sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in tensors.values())
    return MAGIC + struct.pack("<I", len(header)) + header + payload


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(buf) < 12 or buf[:8] != MAGIC:
        raise CheckpointFormatError("not a checkpoint (bad magic or truncated)")
    (hlen,) = struct.unpack_from("<I", buf, 8)
    if 12 + hlen > len(buf):
        raise CheckpointFormatError("truncated header")
    try:
        header = json.loads(buf[12:12 + hlen])
        entries = header["tensors"]
        version = header["version"]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointFormatError(f"corrupt header: {e}") from None
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    off = 12 + hlen
    out = {}
    for e in entries:
        shape = tuple(e["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        if off + 4 * n > len(buf):
            raise CheckpointFormatError(f"truncated payload at tensor {e['name']!r}")
        out[e["name"]] = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(shape).astype(np.float32)
        off += 4 * n
    if off != len(buf):
        raise CheckpointFormatError(f"{len(buf) - off} trailing bytes after payload")
    return out, header.get("meta", {})


def save(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
