from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads: int | None = None) -> int:
    """``None`` reads FICO_THREADS; 0 means one worker per CPU."""
    if threads is None:
        threads = int(os.environ.get("FICO_THREADS", "0") or 0)
    if threads < 0:
        raise ValueError("threads must be >= 0")
    return threads or (os.cpu_count() or 1)


def for_each_block(fn, n: int, block: int, threads: int | None = None) -> None:
    """Call ``fn(start, stop)`` over ``[0, n)`` in blocks, possibly concurrently.

    ``fn`` must write disjoint output rows; nothing is reduced across blocks.
    """
    spans = [(s, min(s + block, n)) for s in range(0, n, block)]
    workers = min(resolve_threads(threads), len(spans))
    if workers <= 1:
        for s, e in spans:
            fn(s, e)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for fut in [pool.submit(fn, s, e) for s, e in spans]:
            fut.result()
