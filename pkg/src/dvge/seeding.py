"""Master-seed expansion.

A master seed is turned into independent per-stage seeds with the splitmix64
finaliser, so each pipeline stage can be cached and rerun on its own::

    derive_seed(master, "vae") == splitmix64((master + crc32("vae") * GOLDEN) mod 2**64) >> 1
"""
from __future__ import annotations

import zlib

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x = (x + GOLDEN) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(master: int, stage: str) -> int:
    """A non-negative 63-bit seed for ``stage``; stable across platforms and Python versions."""
    if master < 0:
        raise ValueError("master seed must be non-negative")
    tag = zlib.crc32(stage.encode("utf-8"))
    return splitmix64((master + tag * GOLDEN) & MASK64) >> 1
