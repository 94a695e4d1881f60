"""Row-band work splitting shared by the per-cell stages."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable


def resolve_threads(threads: int | None) -> int:
    if not threads:
        return os.cpu_count() or 1
    if threads < 0:
        raise ValueError("thread count must be >= 0")
    return threads


def row_bands(height: int, threads: int) -> list[tuple[int, int]]:
    n = max(1, min(threads, height))
    edges = [height * k // n for k in range(n + 1)]
    return [(edges[k], edges[k + 1]) for k in range(n) if edges[k + 1] > edges[k]]


def for_each_band(fn: Callable[[int, int], None], height: int, threads: int | None) -> None:
    """Call ``fn(r0, r1)`` for disjoint row bands covering ``[0, height)``.

    Workers must write only rows ``r0:r1`` of their outputs.
    """
    bands = row_bands(height, resolve_threads(threads))
    if len(bands) == 1:
        fn(*bands[0])
        return
    with ThreadPoolExecutor(max_workers=len(bands)) as pool:
        for fut in [pool.submit(fn, r0, r1) for r0, r1 in bands]:
            fut.result()
