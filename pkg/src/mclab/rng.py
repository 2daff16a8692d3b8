"""Deterministic child streams and chunked replicate fan-out.

Replicates are grouped into fixed-size chunks; chunk ``k`` of a check keyed
``key`` always draws from ``child_rng(seed, key, k)``.  Results therefore do
not depend on how many worker threads execute the chunks.
"""
from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

T = TypeVar("T")

CHUNK = 4096
SEED_ENV = "MC_LAB_SEED"


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    return zlib.crc32(str(key).encode())


def child_rng(seed: int, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) % 2**64, spawn_key=tuple(_key_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def default_seed() -> int:
    return int(os.environ.get(SEED_ENV, "0"))


def chunk_sizes(total: int, chunk: int = CHUNK) -> list[int]:
    full, rest = divmod(int(total), chunk)
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(
    fn: Callable[[np.random.Generator, int], T],
    total: int,
    seed: int,
    key,
    threads: int = 1,
    chunk: int = CHUNK,
) -> list[T]:
    """Apply ``fn(rng, size)`` to every chunk; results come back in chunk order."""
    sizes = chunk_sizes(total, chunk)
    jobs = [(child_rng(seed, key, k), n) for k, n in enumerate(sizes)]
    if threads <= 1 or len(jobs) <= 1:
        return [fn(r, n) for r, n in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
