"""Thread-count policy shared by the solvers and the CLI."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

from .errors import InvalidInput

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "POLARIZE_THREADS"


def thread_limit() -> int:
    """Worker cap from ``POLARIZE_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise InvalidInput(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise InvalidInput(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """``[fn(x) for x in items]``, possibly on a thread pool; order is preserved.

    Each call must be independent, so results do not depend on scheduling.
    """
    items = list(items)
    n = thread_limit() if workers is None else workers
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
