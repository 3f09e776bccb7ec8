"""KWMLP1 checkpoint container.

Layout (all integers little-endian)::

    b"KWMLP1"  u32 version
    u32 len    snapshot JSON (config + label names), utf-8
    u32 count
    count x [u32 name_len, name, u32 rank, rank x u32 dim, f32 data]
    u64        BLAKE2b-64 of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"KWMLP1"
VERSION = 1


class CheckpointIntegrityError(ValueError):
    """Bad magic, bad checksum, or truncated container."""


class CheckpointSchemaError(ValueError):
    """Tensor names or shapes do not fit the selected architecture."""


def _checksum(buf: bytes) -> bytes:
    return hashlib.blake2b(buf, digest_size=8).digest()


def encode(snapshot: dict, tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    meta = json.dumps(snapshot, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(meta)), meta, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape),
                  np.ascontiguousarray(arr, dtype="<f4").tobytes()]
    body = b"".join(parts)
    return body + _checksum(body)


def decode(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(buf) < len(MAGIC) + 8 or buf[: len(MAGIC)] != MAGIC:
        raise CheckpointIntegrityError("not a KWMLP1 checkpoint (bad magic)")
    body, tail = buf[:-8], buf[-8:]
    if _checksum(body) != tail:
        raise CheckpointIntegrityError("checkpoint checksum mismatch")
    try:
        pos = len(MAGIC)
        (version,) = struct.unpack_from("<I", body, pos)
        pos += 4
        if version != VERSION:
            raise CheckpointIntegrityError(f"unsupported checkpoint version {version}")
        (mlen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        snapshot = json.loads(body[pos: pos + mlen].decode("utf-8"))
        pos += mlen
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos: pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            if pos + 4 * n > len(body):
                raise CheckpointIntegrityError(f"tensor {name!r} truncated")
            tensors[name] = np.frombuffer(body, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * n
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"malformed checkpoint: {exc}") from exc
    if pos != len(body):
        raise CheckpointIntegrityError(f"{len(body) - pos} trailing bytes before checksum")
    return snapshot, tensors


def save_checkpoint(path, snapshot: dict, params) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode(snapshot, {k: t.data for k, t in params.named_tensors().items()})
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes())


def assign_tensors(params, tensors: dict[str, np.ndarray]) -> None:
    """Copy arrays into ``params``; the name set and shapes must match exactly."""
    named = params.named_tensors()
    missing = sorted(set(named) - set(tensors))
    extra = sorted(set(tensors) - set(named))
    if missing or extra:
        raise CheckpointSchemaError(f"tensor names do not match architecture: missing {missing[:5]}, "
                                    f"unexpected {extra[:5]}")
    for name, t in named.items():
        arr = tensors[name]
        if arr.shape != t.shape:
            raise CheckpointSchemaError(f"{name}: checkpoint shape {arr.shape} vs model {t.shape}")
        t.data = arr.astype(t.dtype, copy=True)
