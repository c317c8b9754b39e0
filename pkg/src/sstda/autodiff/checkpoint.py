"""Versioned binary checkpoint container.

Layout: 8-byte magic ``SSTDACK1``, uint32 header length, UTF-8 JSON
header (architecture hyperparameters, rng seed, step counter, entry
table), then for each entry the raw little-endian float64 array in the
order listed by the header. Arrays are addressed by stable parameter
identifiers.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SSTDACK1"


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = [{"id": k, "shape": list(np.asarray(v).shape)} for k, v in arrays.items()]
    header = dict(meta)
    header["entries"] = entries
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for k, _ in ((e["id"], e) for e in entries):
            arr = np.ascontiguousarray(np.asarray(arrays[k], dtype=np.float64))
            f.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (arrays: dict[str, ndarray], meta: dict)."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        entries = header.pop("entries")
        arrays = {}
        for e in entries:
            shape = tuple(e["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"{path}: truncated entry {e['id']!r}")
            arrays[e["id"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return arrays, header
