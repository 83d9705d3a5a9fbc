"""Flat binary checkpoint container.

Layout: an 8-byte magic string, a 4-byte little-endian header length, a JSON
header listing array names/shapes plus the seed and a config hash, then the
raw float64 bytes of every array concatenated in header order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CIFSCD01"
FORMAT_VERSION = 1


def config_hash(config: dict | None) -> str:
    canonical = json.dumps(config or {}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_checkpoint(path, arrays: dict[str, np.ndarray],
                    seed: int | None = None, config: dict | None = None):
    names = sorted(arrays)
    header = {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype=np.float64).tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    offset = len(MAGIC)
    (header_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=np.float64).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return arrays, header
