"""Ordered task execution.

Tasks share nothing mutable and results are folded in submission order, so
output does not depend on the worker count.  Threads suffice because the
compiled kernels release the GIL.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], tasks: Iterable[T], workers: int = 1) -> list[R]:
    if workers < 1:
        raise ValueError("workers must be >= 1")
    tasks = list(tasks)
    if workers == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))
