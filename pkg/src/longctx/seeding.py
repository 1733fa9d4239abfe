"""Deterministic seed derivation.

All randomness in the toolkit flows from one master seed. Component seeds
are derived by hashing the master seed with a stable label, so adding or
reordering components never perturbs the streams of the others, and shard
workers get reproducible sub-seeds regardless of scheduling.
"""

from __future__ import annotations

import hashlib


def derive_seed(master_seed: int, *labels) -> int:
    """Derive a 64-bit sub-seed from a master seed and a label path.

    Labels may be strings or integers; they are canonicalized into the
    hash input so ("doc", 12) and ("doc12",) differ.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master_seed)).encode())
    for label in labels:
        h.update(b"\x00")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little")
