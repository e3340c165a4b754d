"""Reproducible random streams.

One root seed is split into named streams (``"environment"``, ``"walk"``,
``"bootstrap"``, ...) and each stream into numbered blocks.  Every block gets
its own counter-based Philox generator keyed by ``(seed, name, block)``, so the
numbers a replica sees depend only on its block index and never on how many
workers ran the blocks or in which order.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

DEFAULT_BLOCK = 8192


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")


class StreamFactory:
    """Splits a root seed into named, block-indexed generators."""

    def __init__(self, seed: int, prefix: str = ""):
        if seed is None or int(seed) < 0:
            raise ValueError("seed must be a non-negative integer")
        self.seed = int(seed)
        self.prefix = prefix

    def generator(self, name: str, block: int = 0) -> np.random.Generator:
        key = _name_key(self.prefix + name)
        ss = np.random.SeedSequence(self.seed, spawn_key=(key, int(block)))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, name: str) -> "StreamFactory":
        """A sub-factory whose streams are disjoint from this one's."""
        return StreamFactory(self.seed, f"{self.prefix}{name}/")


def as_factory(rng) -> StreamFactory:
    """Accept a StreamFactory, an int seed, or None (seed 0)."""
    if isinstance(rng, StreamFactory):
        return rng
    if rng is None:
        return StreamFactory(0)
    if isinstance(rng, (int, np.integer)):
        return StreamFactory(int(rng))
    raise TypeError("expected a StreamFactory or an integer seed")


def block_sizes(reps: int, block: int = DEFAULT_BLOCK) -> list[int]:
    full, rest = divmod(int(reps), block)
    return [block] * full + ([rest] if rest else [])


def run_blocks(fn, reps, factory: StreamFactory, name: str, workers: int = 1,
               block: int = DEFAULT_BLOCK):
    """Call ``fn(size, generator)`` for every block of ``reps`` replicas.

    Results come back in block order whatever the worker count.
    """
    sizes = block_sizes(reps, block)
    tasks = [(size, factory.generator(name, i)) for i, size in enumerate(sizes)]
    if workers <= 1 or len(tasks) <= 1:
        return [fn(size, g) for size, g in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda t: fn(*t), tasks))
