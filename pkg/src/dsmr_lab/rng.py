"""Keyed counter-based random streams and deterministic path-parallel maps.

Every path owns an independent Philox stream keyed by ``(seed, stream tag,
path index)``, so a path can be replayed on its own and results do not depend
on how paths are distributed over worker threads.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

ALGORITHM_ID = "numpy.Philox4x64-10 keyed by SeedSequence(seed, spawn_key=(tag, path))"
CHUNK = 64


def _tag_key(tag: str | int) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag)
    return zlib.crc32(str(tag).encode())


def path_generator(seed: int, path: int, tag: str | int = 0) -> np.random.Generator:
    """Generator for one path of one named stream."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_tag_key(tag), int(path)))
    return np.random.Generator(np.random.Philox(ss))


def default_workers() -> int:
    env = os.environ.get("DSMR_LAB_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


def map_paths(fn: Callable[[int, int], np.ndarray], n_paths: int, workers: int | None = None,
              chunk: int = CHUNK) -> np.ndarray:
    """Evaluate ``fn(start, stop)`` on fixed path chunks and concatenate in path order.

    Chunk boundaries are independent of ``workers`` and every chunk is computed
    by the same code, so the output is bit-identical for any worker count.
    """
    bounds = [(s, min(s + chunk, n_paths)) for s in range(0, n_paths, chunk)]
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(bounds) == 1:
        parts = [fn(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: fn(*ab), bounds))
    return np.concatenate(parts, axis=0)
