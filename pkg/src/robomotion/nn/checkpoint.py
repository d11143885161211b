"""Checkpoint container: one JSON manifest line, then raw float64 blobs.

The manifest records tensor names, shapes and byte offsets (relative to
the end of the manifest line) plus caller metadata. Blobs are
little-endian float64 in manifest order, so identical parameters always
serialize to identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    entries = []
    offset = 0
    arrays = []
    for name in sorted(tensors):
        arr = np.asarray(getattr(tensors[name], "data", tensors[name]), dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
        arrays.append(arr)
    manifest = {"format_version": FORMAT_VERSION, "tensors": entries, "meta": meta or {}}
    with open(path, "wb") as f:
        f.write(json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n")
        for arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: missing manifest line")
    try:
        manifest = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: bad manifest: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {manifest.get('format_version')} != {FORMAT_VERSION}")
    blob = raw[nl + 1:]
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + size * 8
        if end > len(blob):
            raise CheckpointError(f"{path}: tensor '{entry['name']}' truncated")
        tensors[entry["name"]] = np.frombuffer(
            blob[start:end], dtype="<f8").reshape(shape).copy()
    return tensors, manifest["meta"]
