"""Worker-count handling and an order-preserving parallel map.

Results never depend on the worker count: work is split into fixed chunks
whose seeds derive from (seed, chunk index), and outputs are reduced in
chunk order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

WORKERS_ENV = "CAUSALFAIR_WORKERS"

T = TypeVar("T")
R = TypeVar("R")


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(workers))


def pmap(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    items = list(items)
    workers = min(worker_count(workers), max(1, len(items)))
    if workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def child_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for a (seed, *path) coordinate, independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) % 2**64, *map(int, path)]))
