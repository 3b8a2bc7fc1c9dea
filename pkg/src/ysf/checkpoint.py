"""Checkpoint container.

Layout (all integers little-endian)::

    magic            8 bytes   b"YSFCKPT\\0"
    format_version   uint32
    header_length    uint64
    header           UTF-8 JSON, keys sorted, no whitespace
    payload          concatenated tensor blocks, float32 little-endian

The header holds ``config`` (ModelConfig dict), ``metadata`` (free-form
training metadata) and ``tensors``: a list of ``{"name", "shape", "offset",
"nbytes"}`` in state-dict order, offsets relative to the payload start.
Integer buffers (batch-norm ``num_batches_tracked``) are stored as float32
and cast back on load; they are exact below 2**24.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .model import ModelConfig, YShapedAutoencoder, build_model

MAGIC = b"YSFCKPT\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(config: ModelConfig, state: dict, metadata: dict | None = None) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config.to_dict(), "metadata": metadata or {}, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(header)), header] + blobs)


def decode_checkpoint(data: bytes):
    """Return (ModelConfig, OrderedDict of float32 tensors, metadata)."""
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    try:
        version, hlen = struct.unpack_from("<IQ", data, 8)
    except struct.error as e:
        raise CheckpointError("truncated checkpoint header") from e
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    start = 8 + 12
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from e
    payload = start + hlen
    state = OrderedDict()
    for entry in header["tensors"]:
        lo = payload + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(data):
            raise CheckpointError(f"truncated tensor block {entry['name']!r}")
        arr = np.frombuffer(data[lo:hi], dtype="<f4").reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
    return ModelConfig.from_dict(header["config"]), state, header.get("metadata", {})


def save_checkpoint(path, model: YShapedAutoencoder, metadata: dict | None = None) -> bytes:
    data = encode_checkpoint(model.config, model.state_dict(), metadata)
    Path(path).write_bytes(data)
    return data


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Load a checkpoint into a fresh model. Returns (model, metadata)."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    config, state, metadata = decode_checkpoint(data)
    if expect is not None and expect != config:
        raise CheckpointError(f"checkpoint config {config.to_dict()} does not match {expect.to_dict()}")
    model = build_model(config, seed=0)
    load_state(model, state)
    model.eval()
    return model, metadata


def load_state(model: YShapedAutoencoder, state: dict):
    own = model.state_dict()
    if list(own) != list(state):
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        raise CheckpointError(f"parameter names differ (missing={missing[:3]}, unexpected={extra[:3]})")
    cast = OrderedDict()
    for name, ref in own.items():
        t = state[name]
        if tuple(t.shape) != tuple(ref.shape):
            raise CheckpointError(f"shape mismatch for {name}: {tuple(t.shape)} vs {tuple(ref.shape)}")
        cast[name] = t.to(ref.dtype)
    model.load_state_dict(cast)


def checkpoint_id(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]
