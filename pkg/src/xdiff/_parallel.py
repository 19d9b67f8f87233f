from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "XDIFF_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else the environment fallback, else 1."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        try:
            threads = int(raw) if raw else 1
        except ValueError:
            raise ValueError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return int(threads)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    """``[fn(x) for x in items]``, optionally on a thread pool; result order is input order."""
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def shards(n: int, count: int) -> list[slice]:
    """Split ``range(n)`` into ``count`` contiguous slices (fixed, independent of scheduling)."""
    count = max(1, min(count, n))
    bounds = [round(k * n / count) for k in range(count + 1)]
    return [slice(bounds[k], bounds[k + 1]) for k in range(count)]


def sharded(fn: Callable[[slice], R], n: int, threads: int | None = None) -> list[R]:
    threads = resolve_threads(threads)
    return ordered_map(fn, shards(n, threads), threads)


__all__ = ["resolve_threads", "ordered_map", "shards", "sharded", "THREADS_ENV"]
