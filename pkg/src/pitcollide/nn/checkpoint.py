"""Binary weight checkpoints: magic bytes, JSON header, little-endian float64 payload."""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, UntrainedWeights
from .layers import Module

MAGIC = b"PCWT\x00\x01"
VERSION = 1


def architecture_hash(arch: dict) -> str:
    return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest()[:16]


def save(path, module: Module, meta: dict) -> None:
    """Write every parameter of ``module`` with its frozen flag and the run metadata."""
    named = module.named_parameters()
    header = {
        "version": VERSION,
        "params": [{"name": n, "shape": list(p.data.shape), "frozen": p.frozen} for n, p in named],
        "meta": meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for _, p in named)
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(blob)) + blob + payload)


def read(path):
    """Return ``(header, {name: array})`` without touching any module."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a weight checkpoint")
    off = len(MAGIC)
    (n,) = struct.unpack("<I", raw[off:off + 4])
    off += 4
    header = json.loads(raw[off:off + n].decode())
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    off += n
    arrays = {}
    for entry in header["params"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(np.float64)
        off += 8 * size
    if off != len(raw):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return header, arrays


def load(path, module: Module, require_trained: bool = True) -> dict:
    """Fill ``module`` in place and return the stored metadata."""
    header, arrays = read(path)
    meta = header["meta"]
    if require_trained and not meta.get("trained", False):
        raise UntrainedWeights(f"{path} holds weights that were never trained")
    try:
        module.load_state_dict(arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not match the architecture: {exc}") from exc
    named = dict(module.named_parameters())
    for entry in header["params"]:
        named[entry["name"]].frozen = entry["frozen"]
    return meta
