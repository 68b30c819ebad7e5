"""Stateless seed derivation and canonical hashing helpers.

Every random decision in the pipeline flows from an explicit master seed
through `derive_seed`, so any stage can be recomputed independently (and in
parallel) with identical results.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

MASK64 = (1 << 64) - 1

# Fixed salt for feature hashing; changing it changes every feature vector.
FEATURE_HASH_SALT = "trajlab-features-v1"


def derive_seed(*parts: Any) -> int:
    """Derive a 64-bit child seed from an ordered tuple of parts."""
    key = "/".join(str(p) for p in parts)
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def stable_hash64(text: str, salt: str = FEATURE_HASH_SALT) -> int:
    """Platform-stable 64-bit hash of a token (Python's hash() is salted)."""
    digest = hashlib.blake2b(
        f"{salt}\x1f{text}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


def canonical_json(obj: Any) -> str:
    """Serialize with fixed separators and no whitespace; field order is the
    insertion order of the dicts built by the callers (dataclass order)."""
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()
