"""Seeded random streams.

Every stochastic feature (weight init, shuffling, SpecAugment, block drop)
draws from its own Philox stream keyed by ``(seed, purpose, *keys)``.
Philox is counter-based, so a given key produces the same bit stream on
every platform, and turning one feature off never shifts another's draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def make_rng(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Return an independent generator for ``purpose`` (plus optional integer keys,
    e.g. the epoch number) derived from the run seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(purpose_code(purpose), *map(int, keys)))
    return np.random.Generator(np.random.Philox(ss))
