"""Seeded, splittable random streams.

All randomized routines accept ``rng`` as an integer seed, a
``numpy.random.SeedSequence`` or a ready ``numpy.random.Generator``.
Integer seeds and seed sequences are turned into Philox generators, a
counter-based bit generator, so that independent child streams can be
spawned per block of work and results do not depend on how blocks are
scheduled.
"""
from __future__ import annotations

from typing import Union

import numpy as np

RngLike = Union[None, int, np.random.SeedSequence, np.random.Generator]


def seed_sequence(rng: RngLike) -> np.random.SeedSequence:
    """Return a seed sequence for ``rng``.

    A ``Generator`` contributes fresh entropy drawn from itself, which keeps
    results reproducible for a seeded generator.
    """
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, np.random.Generator):
        return np.random.SeedSequence(rng.integers(0, 2**63, size=4).tolist())
    return np.random.SeedSequence(rng)


def make_rng(rng: RngLike) -> np.random.Generator:
    """Return a Philox-backed generator for ``rng`` (generators pass through)."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.Philox(seed_sequence(rng)))


def spawn(rng: RngLike, n: int) -> list[np.random.Generator]:
    """Spawn ``n`` independent child generators from ``rng``."""
    return [np.random.Generator(np.random.Philox(s)) for s in seed_sequence(rng).spawn(n)]


def block_sizes(total: int, block: int) -> list[int]:
    """Split ``total`` items into consecutive blocks of at most ``block`` items."""
    if total <= 0:
        return []
    full, rest = divmod(total, block)
    return [block] * full + ([rest] if rest else [])
