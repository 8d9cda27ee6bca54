"""Deterministic fan-out of replicas over a thread pool.

Work is cut into fixed-size chunks; chunk ``c`` always draws from stream
``(seed, c)``. Results are returned in chunk order, so the output does not
depend on how many workers ran them. The compiled kernels release the GIL,
so threads give real parallelism.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

from .rng import RandomStream

T = TypeVar("T")

__all__ = ["chunk_sizes", "map_chunks"]


def chunk_sizes(n: int, chunk: int) -> list[int]:
    if n < 0 or chunk < 1:
        raise ValueError("need n >= 0 and chunk >= 1")
    full, rest = divmod(n, chunk)
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(
    fn: Callable[[RandomStream, int, int], T],
    n: int,
    seed: int,
    chunk: int = 2000,
    threads: int = 1,
    stream_offset: int = 0,
) -> list[T]:
    """Call ``fn(stream, start, size)`` for each chunk of ``range(n)``."""
    sizes = chunk_sizes(n, chunk)
    starts = [i * chunk for i in range(len(sizes))]
    jobs = [(RandomStream(seed, stream_offset + i), s, k) for i, (s, k) in enumerate(zip(starts, sizes))]
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda j: fn(*j), jobs))
