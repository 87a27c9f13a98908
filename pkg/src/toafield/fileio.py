"""Atomic file writes and canonical JSON helpers.

Artifacts are written to a temp file in the destination directory and moved
into place with os.replace, so a crash never leaves a half-written file.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile


def atomic_write_bytes(path, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, no whitespace churn."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    """Stable sha256 of a configuration mapping."""
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()


def dump_json(path, obj, indent=None) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=indent) + "\n")


def load_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
