"""Ordered parallel map over independent replications.

Each task derives its randomness from its own key, so the result list does
not depend on the thread count. BLAS is pinned to one thread on every path
so that floating-point reductions are identical for any ``threads``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

from threadpoolctl import threadpool_limits


def map_ordered(fn, items, threads: int = 1) -> list:
    items = list(items)
    with threadpool_limits(limits=1):
        if threads is None or threads <= 1 or len(items) <= 1:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
