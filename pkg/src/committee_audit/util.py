"""Shared plumbing: bounded parallel mapping over independent work items."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "COMMITTEEAUDIT_THREADS"


def thread_cap() -> int:
    value = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Map over items, in order, using at most COMMITTEEAUDIT_THREADS
    workers (default 1). Callers must pass pure functions so results are
    schedule-independent."""
    items = list(items)
    workers = min(thread_cap(), max(len(items), 1))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
