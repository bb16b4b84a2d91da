"""Parameter checkpoints.

Layout::

    [8 bytes]  little-endian uint64: header length N
    [N bytes]  UTF-8 JSON: {"arrays": [{"name", "shape", "offset"}, ...], "meta": {...}}
    [rest]     little-endian float64 data; offsets are relative to the start of this section
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .io_utils import atomic_write_bytes


def save_checkpoint(path, arrays, meta=None):
    entries = []
    chunks = []
    offset = 0
    for name, value in arrays.items():
        data = np.ascontiguousarray(value, dtype="<f8")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    atomic_write_bytes(path, struct.pack("<Q", len(header)) + header + b"".join(chunks))


def load_checkpoint(path):
    """Return ``(arrays, meta)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    (n,) = struct.unpack("<Q", blob[:8])
    header = json.loads(blob[8:8 + n].decode("utf-8"))
    body = memoryview(blob)[8 + n:]
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[entry["name"]] = np.frombuffer(body[start:start + 8 * count], dtype="<f8").reshape(shape).astype(np.float64)
    return arrays, header.get("meta", {})
