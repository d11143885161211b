"""Content hashing for artifact provenance checks."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def obj_sha256(obj) -> str:
    """Hash of a JSON-serializable object in canonical form."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def short_hash(full: str, n: int = 12) -> str:
    return full[:n]


def hash_inputs(paths: dict[str, str | Path]) -> dict[str, dict[str, str]]:
    return {name: {"path": str(p), "sha256": file_sha256(p)} for name, p in paths.items()}
