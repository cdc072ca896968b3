"""Ordered replicate maps over a process pool."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional

WORKERS_ENV = "CATBRANCH_WORKERS"


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        return max(1, value)
    return os.cpu_count() or 1


def replicate_map(fn: Callable, items: Iterable, workers: Optional[int] = None, chunksize: int = 0) -> list:
    """``[fn(item) for item in items]``, optionally across processes.

    Results are returned in input order, so any reduction over them is
    independent of scheduling. ``fn`` must be picklable when ``workers > 1``.
    """
    items = list(items)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(items) < 2:
        return [fn(item) for item in items]
    if chunksize <= 0:
        chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
