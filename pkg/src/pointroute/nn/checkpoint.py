"""Checkpoint format: a JSON manifest next to one contiguous float32 blob.

Manifest: {"version": 1, "config": {...}, "tensors": [{"name", "shape",
"offset", "len"}, ...]} where offset/len count float32 elements into the
blob. The blob is little-endian regardless of host byte order.
"""
from __future__ import annotations

import json
import os
from typing import Optional, Tuple

import numpy as np

from ..errors import (
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigMismatchError,
)
from .params import ParamStore

FORMAT_VERSION = 1


def checkpoint_paths(path) -> Tuple[str, str]:
    """Map a checkpoint stem (or its .json path) to (manifest, blob) paths."""
    path = os.fspath(path)
    stem = path[:-5] if path.endswith(".json") else path
    return stem + ".json", stem + ".bin"


def save_checkpoint(store: ParamStore, path, config: dict) -> str:
    manifest_path, blob_path = checkpoint_paths(path)
    entries = []
    chunks = []
    offset = 0
    for name in sorted(store.names()):
        t = np.ascontiguousarray(store[name], dtype=np.float32)
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "len": t.size})
        chunks.append(t.reshape(-1).astype("<f4"))
        offset += t.size
    with open(blob_path, "wb") as f:
        f.write(np.concatenate(chunks).tobytes() if chunks else b"")
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump({"version": FORMAT_VERSION, "config": dict(config), "tensors": entries}, f, indent=1)
    return manifest_path


def load_checkpoint(path, expected_config: Optional[dict] = None) -> Tuple[ParamStore, dict]:
    manifest_path, blob_path = checkpoint_paths(path)
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    version = manifest.get("version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version!r}, expected {FORMAT_VERSION}")
    config = manifest.get("config", {})
    if expected_config is not None:
        diff = {
            k: (expected_config[k], config.get(k))
            for k in expected_config
            if config.get(k) != expected_config[k]
        }
        if diff:
            raise ConfigMismatchError(f"checkpoint config disagrees on {diff}")

    blob = np.fromfile(blob_path, dtype="<f4")
    store = ParamStore()
    for entry in manifest["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        offset, length = int(entry["offset"]), int(entry["len"])
        expected = int(np.prod(shape)) if shape else 1
        if expected != length:
            raise CheckpointShapeError(
                f"tensor {name!r}: manifest len {length} does not match shape {shape}"
            )
        if offset + length > blob.size:
            raise CheckpointTruncatedError(
                f"blob has {blob.size} values; tensor {name!r} needs up to {offset + length}"
            )
        store.add(name, blob[offset:offset + length].reshape(shape).astype(np.float32))
    return store, config
