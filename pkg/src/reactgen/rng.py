"""Deterministic RNG streams.

Every source of randomness in the package draws from a Generator produced by
``stream(seed, *tags)``, where tags name the purpose (and, where relevant,
the unit and token index). Streams are independent and reproducible: string
tags are folded to integers with crc32, so the derivation is stable across
processes and platforms.
"""

from __future__ import annotations

import zlib

import numpy as np


def _entropy(seed: int, tags) -> list[int]:
    ent = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            ent.append(zlib.crc32(tag.encode("utf-8")))
        else:
            ent.append(int(tag) & 0xFFFFFFFFFFFFFFFF)
    return ent


def stream(seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(_entropy(seed, tags)))
