"""Replica scheduling over a process pool.

The worker count comes from ``RWDRE_WORKERS`` (default: available CPUs).
Results come back in submission order, so aggregates do not depend on the
number of workers.
"""

import os
from concurrent.futures import ProcessPoolExecutor

from .errors import ParameterError

WORKERS_ENV = "RWDRE_WORKERS"


def worker_count(workers=None):
    if workers is None:
        raw = os.environ.get(WORKERS_ENV)
        if raw is None:
            try:
                return max(1, len(os.sched_getaffinity(0)))
            except AttributeError:
                return max(1, os.cpu_count() or 1)
        try:
            workers = int(raw)
        except ValueError:
            raise ParameterError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if workers < 1:
        raise ParameterError("need at least one worker")
    return workers


def _chunk(fn, arglist):
    return [fn(*a) for a in arglist]


def map_replicas(fn, arglist, workers=None):
    """``[fn(*args) for args in arglist]``, spread over worker processes."""
    arglist = list(arglist)
    n = worker_count(workers)
    if n == 1 or len(arglist) < 2:
        return [fn(*a) for a in arglist]
    size = max(1, len(arglist) // (4 * n))
    chunks = [arglist[i:i + size] for i in range(0, len(arglist), size)]
    with ProcessPoolExecutor(max_workers=n) as pool:
        parts = pool.map(_chunk, [fn] * len(chunks), chunks)
        return [r for part in parts for r in part]
