"""Reader/writer for the ``LIMB`` named-tensor container.

Layout (little-endian)::

    b"LIMB" | u32 version (=1) | u32 entry count
    per entry: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 payload

Used for model checkpoints and for externally dumped feature matrices.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"LIMB"
VERSION = 1


class IntegrityError(ValueError):
    """Raised when a container or checkpoint fails validation."""


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 255:
            raise ValueError("rank above 255 is not representable")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise IntegrityError("bad magic bytes: not a LIMB container")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise IntegrityError(f"unsupported LIMB version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            nbytes = 4 * n
            if pos + nbytes > len(blob):
                raise IntegrityError(f"truncated payload for tensor {name!r}")
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(dims)
            pos += nbytes
            out[name] = arr.astype(np.float32)
    except struct.error as exc:
        raise IntegrityError(f"truncated container: {exc}") from exc
    if pos != len(blob):
        raise IntegrityError(f"{len(blob) - pos} trailing bytes after last entry")
    return out


def save(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(tensors))


def load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def content_hash(tensors: Mapping[str, np.ndarray]) -> str:
    """SHA-256 over names, shapes and f32 payloads in sorted-name order."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        h.update(name.encode("utf-8"))
        h.update(struct.pack(f"<{arr.ndim}I", *arr.shape))
        h.update(arr.tobytes())
    return h.hexdigest()
