"""Order-preserving process pool used by the sweep drivers."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

JOBS_ENV = "EVENTDF_JOBS"


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


def pmap(fn: Callable[[T], R], items: Iterable[T], jobs: int | None = None) -> list[R]:
    """``list(map(fn, items))``, optionally fanned out to worker processes.

    Results come back in input order, so output never depends on ``jobs``.
    ``fn`` must be picklable (a module-level function or a ``functools.partial``).
    """
    items = list(items)
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    if jobs == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        chunk = max(1, len(items) // (4 * jobs))
        return list(ex.map(fn, items, chunksize=chunk))
