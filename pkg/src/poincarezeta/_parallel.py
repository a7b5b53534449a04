import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "POINCAREZETA_THREADS"


def max_workers():
    """Worker cap from ``POINCAREZETA_THREADS`` (default: CPU count)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def chunked_map(func, rows, chunk_size=4096):
    """Apply ``func`` to row blocks of ``rows`` and concatenate in input order.

    The result does not depend on the worker count: every chunk is
    processed independently and reassembled by position.
    """
    rows = np.asarray(rows)
    if len(rows) == 0:
        return func(rows)
    chunks = [rows[i:i + chunk_size] for i in range(0, len(rows), chunk_size)]
    workers = min(max_workers(), len(chunks))
    if workers == 1:
        parts = [func(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(func, chunks))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p) for p in zip(*parts))
    return np.concatenate(parts)
