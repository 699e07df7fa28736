"""Ordered job execution, inline or on a process pool."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import structlog

logger = structlog.get_logger(__name__)

J = TypeVar("J")
R = TypeVar("R")


def run_ordered(fn: Callable[[J], R], jobs: Iterable[J], workers: int = 1) -> List[R]:
    """Apply ``fn`` to every job and return results in job order.

    ``fn`` and the jobs must be picklable when ``workers > 1``. Results never
    depend on the worker count because each job carries its own RNG keys.
    """
    job_list = list(jobs)
    if workers <= 1 or len(job_list) <= 1:
        return [fn(job) for job in job_list]
    logger.debug("workers.pool.start", workers=workers, jobs=len(job_list))
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, job_list))
