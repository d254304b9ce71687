"""Order-insensitive parallel map over independent work items."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def resolve_workers(workers) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return int(workers)


def parallel_map(fn, items, workers=1) -> list:
    """``[fn(x) for x in items]`` with results in item order.

    Each result lands in a preallocated slot indexed by the item position,
    so the output does not depend on completion order or worker count.
    ``fn`` must be picklable (module level) when ``workers > 1``.
    """
    items = list(items)
    workers = min(resolve_workers(workers), max(len(items), 1))
    out = [None] * len(items)
    if workers == 1:
        for i, x in enumerate(items):
            out[i] = fn(x)
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(fn, x): i for i, x in enumerate(items)}
        for fut, i in futures.items():
            out[i] = fut.result()
    return out


def chunks(n: int, parts: int):
    """Split ``range(n)`` into at most ``parts`` contiguous slices."""
    parts = max(1, min(parts, n))
    bounds = [round(i * n / parts) for i in range(parts + 1)]
    return [slice(bounds[i], bounds[i + 1]) for i in range(parts) if bounds[i] < bounds[i + 1]]
