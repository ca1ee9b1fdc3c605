"""Order-preserving map over worker processes.

Each item is computed by the same code path whatever the worker count, so
results do not depend on ``jobs``.
"""
import os
from concurrent.futures import ProcessPoolExecutor


def default_jobs():
    return max(1, int(os.environ.get("INRSYNTH_JOBS", "1")))


def pmap(fn, items, jobs=1):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))
