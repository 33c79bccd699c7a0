"""Replica-level parallelism with a worker cap from MFLDP_THREADS."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def worker_count() -> int:
    cap = os.environ.get("MFLDP_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def parallel_map(fn, items) -> list:
    """Map preserving input order; results do not depend on the worker count."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
