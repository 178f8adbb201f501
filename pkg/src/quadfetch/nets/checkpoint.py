"""Checkpoint container: magic, versioned descriptor, named float32 arrays."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DGGY"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_bundle(path, descriptor: dict, params: dict[str, np.ndarray]):
    """Write arrays little-endian f32, names sorted for byte determinism."""
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    desc = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    buf += struct.pack("<I", len(desc)) + desc
    buf += struct.pack("<I", len(params))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb)) + nb
        buf += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += arr.tobytes()
    Path(path).write_bytes(bytes(buf))


def load_bundle(path):
    """Read a checkpoint; raises CheckpointError on malformed input."""
    blob = Path(path).read_bytes()
    try:
        if blob[:4] != MAGIC:
            raise CheckpointError("bad magic")
        off = 4
        (version,) = struct.unpack_from("<I", blob, off)
        off += 4
        if version != VERSION:
            raise CheckpointError(f"unsupported version {version}")
        (dlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        descriptor = json.loads(blob[off : off + dlen].decode("utf-8"))
        off += dlen
        (count,) = struct.unpack_from("<I", blob, off)
        off += 4
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
            off += 4 * n
            params[name] = arr.copy()
        if off != len(blob):
            raise CheckpointError("trailing bytes")
        return descriptor, params
    except (struct.error, IndexError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from exc
