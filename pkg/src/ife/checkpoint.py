"""``IFE1`` checkpoint files.

Layout::

    b"IFE1"
    uint32 little-endian: header length in bytes
    header: UTF-8 JSON (sorted keys) with the model config, fingerprint,
            free-form metadata and a manifest of (name, shape, offset)
    parameter blobs: little-endian float32, concatenated in manifest order;
                     offsets are relative to the first blob byte

Parameters are trained in float64 and rounded to float32 on save.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .model import ModelConfig, ModelParams
from .tensor import Tensor

MAGIC = b"IFE1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(cfg: ModelConfig, params: ModelParams, meta: Optional[dict] = None) -> bytes:
    if params.fingerprint != cfg.fingerprint():
        raise CheckpointError("parameter fingerprint does not match the model config")
    manifest, blobs, offset = [], [], 0
    for name, t in params.tensors.items():
        blob = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(t.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "version": VERSION,
        "model": cfg.to_dict(),
        "fingerprint": params.fingerprint,
        "meta": meta or {},
        "params": manifest,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs)


def decode(data: bytes) -> Tuple[ModelConfig, ModelParams, dict]:
    if data[:4] != MAGIC:
        raise CheckpointError("not an IFE1 checkpoint (bad magic bytes)")
    if len(data) < 8:
        raise CheckpointError("truncated checkpoint header")
    (hlen,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    cfg = ModelConfig.from_dict(header["model"])
    if cfg.fingerprint() != header["fingerprint"]:
        raise CheckpointError("checkpoint fingerprint does not match its stored config")
    body = memoryview(data)[8 + hlen :]
    tensors = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(body):
            raise CheckpointError(f"parameter {entry['name']} runs past the end of the file")
        arr = np.frombuffer(body[start:end], dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = Tensor(arr.astype(np.float64), requires_grad=True, name=entry["name"])
    return cfg, ModelParams(tensors, header["fingerprint"]), header["meta"]


def save(path, cfg: ModelConfig, params: ModelParams, meta: Optional[dict] = None) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode(cfg, params, meta))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from None


def load(path) -> Tuple[ModelConfig, ModelParams, dict]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return decode(data)
