"""Text normalization and seeded hashing shared by every subsystem.

All derived artifacts (column sketches, row fingerprints, sample ranks) must
be reproducible across processes, so hashing never relies on Python's
randomized ``hash()``; every hash is a keyed BLAKE2b with a fixed key.
"""

from __future__ import annotations

import re
from functools import lru_cache
from hashlib import blake2b

_WS = re.compile(r"\s+")
_TOKEN = re.compile(r"[0-9a-z]+")
# Strict numeric shape; deliberately rejects "nan", "inf" and friends.
_NUMERIC = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")

_COLUMN_KEY = b"vf-column-hash-1"
_ROW_KEY = b"vf-row-hash-1"
_SAMPLE_KEY = b"vf-sample-hash-1"

MASK64 = (1 << 64) - 1
MASK128 = (1 << 128) - 1


@lru_cache(maxsize=1 << 17)
def normalize(text: str) -> str:
    """Lowercase, trim, and collapse internal whitespace."""
    return _WS.sub(" ", text.strip()).lower()


def tokenize(text: str) -> list[str]:
    """Alphanumeric tokens of the normalized text."""
    return _TOKEN.findall(normalize(text))


@lru_cache(maxsize=1 << 17)
def canonical_value(cell: str) -> str:
    """Comparison form of a cell: numeric text collapses to one rendering.

    "007" and "7" join; "1.0" and "1" join; everything else compares as
    normalized text. Empty cells stay empty (and never match as join keys).
    """
    s = normalize(cell)
    if s and _NUMERIC.match(s):
        f = float(s)
        if f.is_integer() and abs(f) < 2**53:
            return str(int(f))
        return repr(f)
    return s


def hash64(text: str, seed: int = 0) -> int:
    key = _COLUMN_KEY if seed == 0 else _COLUMN_KEY + seed.to_bytes(8, "big")
    return int.from_bytes(
        blake2b(text.encode("utf-8"), digest_size=8, key=key).digest(), "big"
    )


@lru_cache(maxsize=1 << 17)
def sample_hash64(text: str, salt: int = 0) -> int:
    """Hash used for consistent sampling and join partitioning."""
    key = _SAMPLE_KEY if salt == 0 else _SAMPLE_KEY + salt.to_bytes(8, "big")
    return int.from_bytes(
        blake2b(text.encode("utf-8"), digest_size=8, key=key).digest(), "big"
    )


@lru_cache(maxsize=1 << 18)
def cell_hash128(attribute: str, cell: str) -> int:
    """128-bit keyed hash of (attribute name, normalized cell text)."""
    payload = (
        normalize(attribute).encode("utf-8") + b"\x1f" + normalize(cell).encode("utf-8")
    )
    return int.from_bytes(blake2b(payload, digest_size=16, key=_ROW_KEY).digest(), "big")


def combine128(hashes) -> int:
    """Order-independent combination: unsigned wraparound sum mod 2^128."""
    total = 0
    for h in hashes:
        total = (total + h) & MASK128
    return total
