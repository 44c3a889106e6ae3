"""Checkpoint files.

Layout: an 8-byte little-endian manifest length, the UTF-8 JSON manifest
(a list of ``{"name", "shape", "byte_offset"}``), then the contiguous
little-endian float64 payload. ``byte_offset`` is relative to the start of
the payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


def save_checkpoint(params: dict[str, np.ndarray], path) -> None:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in params.items():
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(np.shape(arr)), "byte_offset": offset})
        chunks.append(buf)
        offset += len(buf)
    head = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack("<Q", raw[:8])
    try:
        manifest = json.loads(raw[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: bad checkpoint manifest ({exc})") from None
    payload = raw[8 + n:]
    out = {}
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        if start + 8 * count > len(payload):
            raise ValueError(f"{path}: payload too short for {entry['name']}")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        out[entry["name"]] = arr.astype(np.float64).reshape(shape)
    return out
