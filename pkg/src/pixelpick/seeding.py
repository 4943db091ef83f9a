"""Deterministic RNG substreams derived by hashing structured keys.

Selections, noise decisions and augmentation draws must not depend on
iteration order, so every consumer derives its own stream from a stable
hash of (seed, *context) instead of sharing one global generator.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stable_seed", "substream"]


def stable_seed(*parts: object) -> int:
    """Map a tuple of ints/strings to a stable 64-bit seed.

    The encoding is explicit (type tag + value, NUL separated) so that
    e.g. ("ab", "c") and ("a", "bc") hash differently.
    """
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, (bool, np.bool_)):
            raise TypeError("booleans are ambiguous seed parts; use ints")
        if isinstance(part, (int, np.integer)):
            h.update(b"i" + str(int(part)).encode("ascii") + b"\x00")
        elif isinstance(part, str):
            h.update(b"s" + part.encode("utf-8") + b"\x00")
        else:
            raise TypeError(f"unsupported seed part type: {type(part)!r}")
    return int.from_bytes(h.digest()[:8], "little")


def substream(*parts: object) -> np.random.Generator:
    """A fresh Generator whose state depends only on the key tuple."""
    return np.random.default_rng(stable_seed(*parts))
