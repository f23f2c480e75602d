"""Binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic b"DSEGCKPT"
    uint32    format version (1)
    uint32    header length N in bytes
    N bytes   UTF-8 JSON header, keys sorted:
                {"fingerprint": sha256 of the model config,
                 "model_config": {...},
                 "meta": {...},
                 "tensors": [{"name", "shape", "offset", "nbytes"}, ...]}
    payload   float32 little-endian arrays, C order, at the listed offsets
              (relative to the start of the payload)

Tensor names are the model's parameter names; optimizer moments are stored
under ``optim.m.<name>`` / ``optim.v.<name>``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DSEGCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], model_config: dict,
                    fingerprint: str, meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name in tensors:
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"fingerprint": fingerprint, "model_config": model_config, "meta": meta or {}, "tensors": entries},
        sort_keys=True,
    ).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (name -> float32 array, header without the tensor table)."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    base = 16 + hlen
    tensors = {}
    for e in header.pop("tensors"):
        start = base + e["offset"]
        buf = data[start : start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        tensors[e["name"]] = np.frombuffer(buf, dtype="<f4").reshape(e["shape"]).copy()
    return tensors, header
