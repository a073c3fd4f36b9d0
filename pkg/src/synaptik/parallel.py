"""Worker-thread cap shared by the numba kernels and the thread pools.

Every parallel path partitions work into independent units whose results are
reassembled in a fixed order, so outputs do not depend on the thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numba

ENV_VAR = "SYNAPTIK_THREADS"

# try OpenMP before TBB: an outdated TBB only costs a warning, but it is noisy
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_threads = 1


def available_threads() -> int:
    return int(numba.config.NUMBA_NUM_THREADS)


def set_threads(n: int | None = None) -> int:
    """Cap parallelism at ``n`` (or ``$SYNAPTIK_THREADS``, else 1).

    numba cannot exceed the pool size fixed at import, so larger requests are
    clamped. Returns the effective count.
    """
    global _threads
    if n is None:
        n = int(os.environ.get(ENV_VAR, "1") or 1)
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _threads = n
    numba.set_num_threads(min(n, available_threads()))
    return _threads


def get_threads() -> int:
    return _threads


def ordered_map(fn, items):
    """``list(map(fn, items))`` spread over the configured threads."""
    items = list(items)
    if _threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(fn, items))
