"""Parameter checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then raw little-endian float64 payloads. The header carries
``{"tensors": {name: {"shape": [...], "offset": int}}, "config": {...}}``
with offsets into the payload region; tensors are laid out in sorted-name
order so identical state always produces identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"PFCKPT01"


class CheckpointError(Exception):
    pass


def save_checkpoint(path, tensors, config=None):
    """Write ``{name: ndarray}`` plus an optional JSON-compatible config."""
    index = {}
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        index[name] = {"shape": list(arr.shape), "offset": len(payload)}
        payload += arr.tobytes()
    header = json.dumps(
        {"tensors": index, "config": config or {}}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(bytes(payload))


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors dict, config dict)."""
    try:
        f = open(path, "rb")
    except OSError as err:
        raise CheckpointError(f"cannot open checkpoint {path}: {err}") from err
    with f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = f.read()
    tensors = {}
    for name, meta in header["tensors"].items():
        shape = tuple(meta["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        end = start + 8 * n
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated payload for tensor {name}")
        arr = np.frombuffer(payload[start:end], dtype="<f8").reshape(shape)
        tensors[name] = arr.astype(np.float64)
    return tensors, header.get("config", {})
