"""Counter-based random substreams.

Every Monte Carlo routine draws its randomness from a :class:`Substream`,
which hands out one Philox generator per fixed-size block of paths.  The
generator for block ``j`` depends only on ``(seed, op_id, j)``, so the
numbers a path sees do not depend on how many worker threads are used or on
the order in which blocks are scheduled.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, TypeVar

import numpy as np

T = TypeVar("T")

BLOCK_SIZE = 8192


def _op_key(op_id: str) -> int:
    return zlib.crc32(op_id.encode("utf-8"))


@dataclass(frozen=True)
class Substream:
    """Deterministic source of per-block generators.

    Parameters
    ----------
    seed : int
        Master seed (64-bit).
    op_id : str
        Operation tag; distinct tags give independent streams.
    threads : int
        Worker threads used by :meth:`map_blocks`.  Results never depend on it.
    """

    seed: int
    op_id: str = "root"
    threads: int = 1

    def child(self, op_id: str) -> "Substream":
        return replace(self, op_id=f"{self.op_id}/{op_id}")

    def generator(self, block: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(
            [int(self.seed) & 0xFFFFFFFFFFFFFFFF, _op_key(self.op_id), int(block)]
        )
        return np.random.Generator(np.random.Philox(ss))

    def blocks(self, total: int, block_size: int = BLOCK_SIZE) -> List[tuple]:
        """Split ``total`` paths into ``(block_index, start, stop)`` triples."""
        out = []
        for j, start in enumerate(range(0, total, block_size)):
            out.append((j, start, min(total, start + block_size)))
        return out

    def map_blocks(
        self,
        fn: Callable[[np.random.Generator, int, int], T],
        total: int,
        block_size: int = BLOCK_SIZE,
    ) -> List[T]:
        """Run ``fn(rng, start, stop)`` on every block, results in block order."""
        jobs = self.blocks(total, block_size)

        def run(job):
            j, start, stop = job
            return fn(self.generator(j), start, stop)

        if self.threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(run, jobs))
        return [run(job) for job in jobs]


def as_stream(stream, op_id: str) -> Substream:
    """Accept a Substream or a bare integer seed."""
    if isinstance(stream, Substream):
        return stream.child(op_id)
    if isinstance(stream, (int, np.integer)):
        return Substream(int(stream), op_id)
    raise TypeError(f"expected Substream or int seed, got {type(stream).__name__}")
