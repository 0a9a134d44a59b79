import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def thread_count():
    """Worker count from ``ATTNKERN_THREADS`` (0 or unset means one per CPU)."""
    try:
        n = int(os.environ.get("ATTNKERN_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def pmap(fn, items, workers=None):
    """Ordered map; results are merged by input index regardless of completion order."""
    items = list(items)
    workers = thread_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def derive_seed(master, *keys):
    """Stable child seed for ``(master, *keys)``; independent of evaluation order."""
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1)[0])
