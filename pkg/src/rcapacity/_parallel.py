"""Seeded sample blocks with an order-fixed reduction.

Every block of ``block_size`` samples owns its RNG stream, keyed by the
master seed, a stream tag and the block index.  Results come back in block
order, so output never depends on how many threads ran the blocks.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

BLOCK_SIZE = 256


@dataclass(frozen=True)
class Block:
    index: int
    start: int
    stop: int
    seed: int
    tag: tuple

    @property
    def size(self) -> int:
        return self.stop - self.start

    def rng(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(*self.tag, self.index))
        return np.random.default_rng(ss)


def blocks(n_samples: int, seed: int, tag=(), block_size: int = BLOCK_SIZE) -> list:
    tag = tuple(int(t) for t in tag)
    return [
        Block(i, a, min(a + block_size, n_samples), int(seed), tag)
        for i, a in enumerate(range(0, n_samples, block_size))
    ]


def run_blocks(fn, block_list, threads: int = 1) -> list:
    """``[fn(b) for b in block_list]``, optionally on a thread pool."""
    if threads <= 1 or len(block_list) <= 1:
        return [fn(b) for b in block_list]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, block_list))
