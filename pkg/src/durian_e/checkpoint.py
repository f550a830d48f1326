"""Checkpoint file format.

Layout (little-endian)::

    b"DRNC" | u32 version | u32 len + config JSON
    | u32 blob count | per blob: u32 len + name, u32 ndim, ndim x u32 dims, f64 data
    | u32 len + rng state JSON | u64 step

Blob names are prefixed ``param/`` (model) or ``opt/`` (optimizer state).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"DRNC"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    blobs: dict[str, np.ndarray]
    rng_state: dict
    step: int

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {k[len("param/"):]: v for k, v in self.blobs.items() if k.startswith("param/")}

    @property
    def optimizer(self) -> dict[str, np.ndarray]:
        return {k[len("opt/"):]: v for k, v in self.blobs.items() if k.startswith("opt/")}


def _lp(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def encode(ck: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _lp(json.dumps(ck.config, sort_keys=True).encode())]
    parts.append(struct.pack("<I", len(ck.blobs)))
    for name, arr in ck.blobs.items():
        arr = np.asarray(arr, dtype="<f8")
        parts.append(_lp(name.encode()))
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    parts.append(_lp(json.dumps(ck.rng_state, sort_keys=True).encode()))
    parts.append(struct.pack("<Q", ck.step))
    return b"".join(parts)


def decode(buf: bytes) -> Checkpoint:
    if buf[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {buf[:4]!r}")
    off = 4

    def u32():
        nonlocal off
        (v,) = struct.unpack_from("<I", buf, off)
        off += 4
        return v

    def chunk():
        nonlocal off
        n = u32()
        if off + n > len(buf):
            raise CheckpointFormatError("truncated checkpoint")
        data = buf[off:off + n]
        off += n
        return data

    try:
        version = u32()
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        config = json.loads(chunk())
        blobs = {}
        for _ in range(u32()):
            name = chunk().decode()
            ndim = u32()
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(buf, dtype="<f8", count=count, offset=off).astype(np.float64)
            off += 8 * count
            blobs[name] = arr.reshape(shape)
        rng_state = json.loads(chunk())
        (step,) = struct.unpack_from("<Q", buf, off)
        off += 8
    except (struct.error, ValueError) as exc:
        if isinstance(exc, CheckpointFormatError):
            raise
        raise CheckpointFormatError(f"corrupt checkpoint: {exc}") from None
    if off != len(buf):
        raise CheckpointFormatError(f"{len(buf) - off} trailing bytes")
    return Checkpoint(config, blobs, rng_state, step)


def save(ck: Checkpoint, path: str | Path):
    Path(path).write_bytes(encode(ck))


def load(path: str | Path) -> Checkpoint:
    return decode(Path(path).read_bytes())
