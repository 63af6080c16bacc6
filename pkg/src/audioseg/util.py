"""Small shared helpers: stable hashing, seed derivation, JSON on disk."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def stable_hash_bytes(*parts: object) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return h.digest()


def derive_seed(*parts: object) -> int:
    """Deterministic 63-bit seed from arbitrary repr-able parts."""
    return int.from_bytes(stable_hash_bytes(*parts)[:8], "little") >> 1


def config_hash(obj: object) -> str:
    """Short stable digest of a JSON-serializable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def dump_json(path: str | Path, obj: object) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_json(path: str | Path) -> object:
    return json.loads(Path(path).read_text(encoding="utf-8"))
