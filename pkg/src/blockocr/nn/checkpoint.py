"""Checkpoint files: magic, format version, JSON header, little-endian float32 payloads."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import FormatError
from .config import AttentionRegime, ModelConfig
from .model import ModelState

MAGIC = b"BOCKPT\x00\x01"
FORMAT_VERSION = 1


def _segments(model: ModelState):
    for name, t in model.params.items():
        yield f"param/{name}", t
    for name, t in model.exp_avg.items():
        yield f"adam_m/{name}", t
    for name, t in model.exp_avg_sq.items():
        yield f"adam_v/{name}", t


def to_bytes(model: ModelState) -> bytes:
    payload = []
    index = []
    offset = 0
    for name, t in _segments(model):
        raw = t.detach().cpu().numpy().astype("<f4").tobytes()
        index.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "regime": model.regime.to_dict(),
        "step_count": model.step_count,
        "segments": index,
    }, sort_keys=True).encode()
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(payload)


def from_bytes(data: bytes) -> ModelState:
    if data[:8] != MAGIC:
        raise FormatError("not a checkpoint file", 0)
    if len(data) < 16:
        raise FormatError("truncated checkpoint header", len(data))
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise FormatError(f"checkpoint format version {version}, expected {FORMAT_VERSION}", 8)
    if len(data) < 16 + hlen:
        raise FormatError("truncated checkpoint header", len(data))
    header = json.loads(data[16:16 + hlen])
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError("header format_version mismatch", 16)
    base = 16 + hlen
    stores: dict[str, dict[str, torch.Tensor]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for seg in header["segments"]:
        start = base + seg["offset"]
        if start + seg["nbytes"] > len(data):
            raise FormatError(f"truncated payload for segment {seg['name']}", len(data))
        arr = np.frombuffer(data, dtype="<f4", count=seg["nbytes"] // 4, offset=start)
        kind, name = seg["name"].split("/", 1)
        stores[kind][name] = torch.from_numpy(arr.astype(np.float32).reshape(seg["shape"]))
    model = ModelState(
        ModelConfig.from_dict(header["config"]),
        AttentionRegime.from_dict(header["regime"]),
        stores["param"], stores["adam_m"], stores["adam_v"], header["step_count"],
    )
    if set(model.params) != set(model.exp_avg) or set(model.params) != set(model.exp_avg_sq):
        raise FormatError("moment segments do not match parameter segments")
    return model


def save_checkpoint(model: ModelState, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(model))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> ModelState:
    return from_bytes(Path(path).read_bytes())
