"""Derivation of independent RNG streams from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(master: int, *labels) -> int:
    """A 64-bit child seed for ``master`` and a path of string/int labels.

    String labels are hashed with CRC32 so the mapping is stable across
    Python processes (unlike ``hash``).
    """
    key = [int(master) & 0xFFFFFFFFFFFFFFFF]
    for label in labels:
        key.append(zlib.crc32(label.encode("utf-8")) if isinstance(label, str) else int(label))
    seq = np.random.SeedSequence(key)
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def rng_for(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))
