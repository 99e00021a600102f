from __future__ import annotations

import hashlib
import json
from pathlib import Path

MASK64 = (1 << 64) - 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def stable_hash(*parts) -> int:
    """64-bit digest of JSON-serializable ``parts``; identical across runs and platforms."""
    return int.from_bytes(hashlib.sha256(canonical_json(parts).encode("utf-8")).digest()[:8], "big")


def derive_seed(seed: int, *scope) -> int:
    return (int(seed) & MASK64) ^ stable_hash("seed", *scope)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
