"""Seed derivation.

All stochastic operations in the package draw from numpy's PCG64 generator.
Child generators are derived from a master seed through ``SeedSequence`` spawn
keys, so any (tag, k, round, ...) coordinate maps to the same stream no matter
in which order, or on how many threads, the coordinates are visited.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["derive_rng", "derive_seed_sequence", "child_seed"]


def _encode(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        # spawn keys must be uint32 words
        return int(part) & 0xFFFFFFFF
    raise TypeError(f"seed key parts must be str or int, got {type(part)!r}")


def derive_seed_sequence(seed: int, *parts) -> np.random.SeedSequence:
    """Seed sequence for the stream addressed by ``parts`` under ``seed``."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_encode(p) for p in parts))


def derive_rng(seed: int, *parts) -> np.random.Generator:
    """Independent PCG64 generator for the stream addressed by ``parts``."""
    return np.random.default_rng(derive_seed_sequence(seed, *parts))


def child_seed(seed: int, *parts) -> int:
    """Integer seed for the stream addressed by ``parts`` (for seed-taking APIs)."""
    return int(derive_seed_sequence(seed, *parts).generate_state(1, np.uint64)[0])
