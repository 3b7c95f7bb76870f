"""Versioned weight checkpoints.

Layout (all integers big-endian):

    magic   4 bytes  b"BGWT"
    version 1 byte   (currently 1)
    mlen    4 bytes  u32, manifest length in bytes
    manifest mlen bytes of UTF-8 JSON:
        {"config": <codec config dict>,
         "extra": <small user metadata dict>,
         "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    blob    concatenated raw tensor data, little-endian float32,
            C-contiguous, at the offsets given in the manifest

The manifest fully describes the blob, so the file stays readable without
this library. Only float32 parameters are stored; buffers with other dtypes
are rejected at save time rather than silently cast.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .codec import CodecConfig, VideoCodec
from .errors import DataError

MAGIC = b"BGWT"
VERSION = 1


def save_checkpoint(path, codec: VideoCodec, extra: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, tensor in codec.state_dict().items():
        if tensor.dtype != torch.float32:
            raise DataError(f"checkpoint supports float32 only, {name} is {tensor.dtype}")
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": "<f4",
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({
        "config": json.loads(codec.config.to_json()),
        "extra": extra or {},
        "tensors": entries,
    }).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack(">B", VERSION))
        f.write(struct.pack(">I", len(manifest)))
        f.write(manifest)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path, map_location="cpu") -> tuple[VideoCodec, dict]:
    """Rebuild a codec from a checkpoint. Returns (codec, extra metadata)."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if len(data) < 9 or data[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    version = data[4]
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (mlen,) = struct.unpack(">I", data[5:9])
    if 9 + mlen > len(data):
        raise DataError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[9 : 9 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt manifest: {exc}") from None

    config = CodecConfig.from_json(json.dumps(manifest["config"]))
    codec = VideoCodec(config)
    blob_start = 9 + mlen
    state = {}
    for entry in manifest["tensors"]:
        lo = blob_start + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(data):
            raise DataError(f"{path}: truncated tensor data for {entry['name']}")
        arr = np.frombuffer(data[lo:hi], dtype=entry["dtype"]).reshape(entry["shape"]).copy()
        state[entry["name"]] = torch.from_numpy(arr).to(map_location)
    try:
        codec.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise DataError(f"{path}: state does not match config-built model: {exc}") from None
    codec.eval()
    return codec, manifest.get("extra", {})
