"""Order-preserving fan-out over independent work items."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

JOBS_ENV = "INDIST_ADV_JOBS"


def resolve_jobs(jobs: int | None) -> int:
    """``jobs`` if given, else ``$INDIST_ADV_JOBS``, else the logical core count."""
    if jobs is None:
        env = os.environ.get(JOBS_ENV)
        jobs = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(jobs))


def parallel_map(fn, items, jobs: int = 1) -> list:
    """``[fn(x) for x in items]``, fanned out over processes when ``jobs > 1``.

    ``fn`` and every item must be picklable in the parallel case.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
