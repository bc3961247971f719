"""Deterministic fan-out of one master seed into named substreams.

Every source of randomness in a run (data synthesis, partitioning, local
splits, the two projection heads, the backbone stand-in) draws its own
64-bit seed as blake2b(master || label), so one knob reproduces everything
and streams stay independent of each other.
"""

from __future__ import annotations

import hashlib
import struct

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, label: str) -> int:
    """64-bit seed for the substream named ``label`` under ``master``."""
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", master & _MASK64))
    h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")
