"""Order-preserving map over a thread pool.

Results depend only on the inputs because every work item draws from its
own random substream; the pool size changes wall time, not output.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable


def parallel_map(fn: Callable, items: Iterable, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
