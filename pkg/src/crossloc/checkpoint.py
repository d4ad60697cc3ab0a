"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    bytes 0-7    magic b"XLOCCKPT"
    bytes 8-11   format version (uint32), currently 1
    bytes 12-19  header length H in bytes (uint64)
    bytes 20..   UTF-8 JSON header, H bytes (sorted keys, no whitespace)
    bytes 20+H.. payload: raw float64 little-endian tensor data

Header schema:

    {"config_hash": str,
     "extra": {...},                      # caller metadata, JSON-safe
     "model_config": {...},               # ModelConfig fields
     "opt": null | {"step": int, "tensors": [tensor-entry, ...]},
     "tensors": [tensor-entry, ...],
     "version": 1}

A tensor-entry is {"name": str, "offset": int, "shape": [int, ...]}; offset
is relative to the payload start, data is C-order float64.  Entries are
sorted by name; optimizer moment tensors are named "m.<param>"/"v.<param>".
Files are written deterministically: identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from typing import Any

import numpy as np

from .model import ModelConfig, ModelParams, config_hash

MAGIC = b"XLOCCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack_tensors(arrays: dict[str, np.ndarray]) -> tuple[list[dict], bytes]:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        raw = arr.tobytes()
        entries.append({"name": name, "offset": offset, "shape": list(arr.shape)})
        chunks.append(raw)
        offset += len(raw)
    return entries, b"".join(chunks)


def save_checkpoint(
    path: str,
    params: ModelParams,
    extra: dict[str, Any] | None = None,
    opt: tuple[int, dict[str, np.ndarray]] | None = None,
) -> None:
    arrays = {name: t.data for name, t in params.named().items()}
    tensor_entries, payload = _pack_tensors(arrays)
    header: dict[str, Any] = {
        "version": VERSION,
        "model_config": params.config.to_dict(),
        "config_hash": config_hash(params.config.to_dict()),
        "extra": extra or {},
        "tensors": tensor_entries,
        "opt": None,
    }
    if opt is not None:
        step, moments = opt
        opt_entries, opt_payload = _pack_tensors(moments)
        for e in opt_entries:
            e["offset"] += len(payload)
        header["opt"] = {"step": step, "tensors": opt_entries}
        payload += opt_payload
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)
    os.replace(tmp, path)


def _read_tensors(entries: list[dict], payload: bytes) -> dict[str, np.ndarray]:
    out = {}
    for e in entries:
        shape = tuple(e["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = e["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start).reshape(shape)
        out[e["name"]] = arr.astype(np.float64)
    return out


def load_checkpoint(path: str) -> tuple[ModelParams, dict, tuple[int, dict[str, np.ndarray]] | None]:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise CheckpointError(f"{path}: not a crossloc checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        payload = fh.read()
    config = ModelConfig.from_dict(header["model_config"])
    params = ModelParams.from_tensors(config, _read_tensors(header["tensors"], payload))
    opt = None
    if header.get("opt"):
        opt = (header["opt"]["step"], _read_tensors(header["opt"]["tensors"], payload))
    return params, header.get("extra", {}), opt
