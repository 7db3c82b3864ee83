"""Flat binary parameter checkpoints with a JSON manifest sidecar.

Binary layout (all integers little-endian):

    magic      4 bytes   b"TPCK"
    version    uint16    currently 1
    count      uint32    number of tensors
    names      count x (uint16 length, utf-8 bytes)
    shapes     count x (uint8 ndim, ndim x uint32)
    values     float64 little-endian, tensors concatenated in name-table order

The manifest ``<path>.json`` repeats names, shapes and byte offsets and carries
the SHA-256 of the binary file plus free-form metadata.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"TPCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], metadata: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(tensors)
    arrays = [np.array(tensors[n], dtype="<f8", order="C") for n in names]   # keeps 0-d shapes
    header = bytearray(MAGIC)
    header += struct.pack("<HI", VERSION, len(names))
    for name in names:
        raw = name.encode("utf-8")
        header += struct.pack("<H", len(raw)) + raw
    for arr in arrays:
        header += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    entries = []
    offset = len(header)
    for name, arr in zip(names, arrays):
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "dtype": "float64"})
        offset += arr.nbytes
    blob = bytes(header) + b"".join(a.tobytes() for a in arrays)
    path.write_bytes(blob)
    manifest = {
        "format": "TPCK",
        "version": VERSION,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "tensors": entries,
        "metadata": metadata or {},
    }
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    try:
        return _parse(blob, path)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from None


def _parse(blob: bytes, path) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 10
    names = []
    for _ in range(count):
        (length,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        names.append(blob[pos:pos + length].decode("utf-8"))
        pos += length
    shapes = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shapes.append(struct.unpack_from(f"<{ndim}I", blob, pos))
        pos += 4 * ndim
    out = {}
    for name, shape in zip(names, shapes):
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape)
        out[name] = arr.astype(float)
        pos += 8 * size
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return out


def read_manifest(path) -> dict:
    return json.loads(Path(str(path) + ".json").read_text())
