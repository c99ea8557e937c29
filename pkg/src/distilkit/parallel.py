"""Order-preserving worker map capped by DISTILKIT_THREADS (default 1).

Only used for pure per-utterance work (forward passes, truncation), so results
are identical for any thread count; output order always matches input order.
"""

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count():
    raw = os.environ.get("DISTILKIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(1, n)


def thread_map(fn, items):
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
