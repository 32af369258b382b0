"""Deterministic seed derivation for independent random streams."""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(base: int, *parts: int | str) -> int:
    """Derive a child seed from a base seed and a role tag.

    Strings are folded through crc32 so the derivation does not depend on
    Python's per-process hash salt.
    """
    entropy = [int(base) & 0xFFFFFFFF]
    for p in parts:
        if isinstance(p, str):
            entropy.append(zlib.crc32(p.encode("utf-8")))
        else:
            entropy.append(int(p) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])
