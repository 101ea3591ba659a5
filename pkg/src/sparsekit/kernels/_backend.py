"""Kernel backend selection, row-parallel dispatch and MAC accounting.

The compiled ``_core`` is used when importable; ``SPARSEKIT_BACKEND=python``
forces the numpy fallback. Worker threads split output rows into contiguous
chunks; every row is computed by exactly one worker with a fixed reduction
order, so results do not depend on the thread count.
"""
from __future__ import annotations

import contextlib
import contextvars
import importlib
import os
from concurrent.futures import ThreadPoolExecutor

from sparsekit.kernels import _pycore

# below this many MACs the pool costs more than it saves
_PARALLEL_MIN_MACS = 1 << 20


def _load_compiled():
    try:
        return importlib.import_module("sparsekit.kernels._core")
    except ImportError:
        return None


_compiled = _load_compiled()
BACKENDS = {"python": _pycore}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

_requested = os.environ.get("SPARSEKIT_BACKEND", "").strip().lower()
if _requested and _requested not in BACKENDS:
    raise ImportError(f"SPARSEKIT_BACKEND={_requested!r} is not available; have {sorted(BACKENDS)}")
_active = _requested or ("cython" if "cython" in BACKENDS else "python")


def backend_name() -> str:
    return _active


def get_backend(name: str | None = None):
    return BACKENDS[name or _active]


@contextlib.contextmanager
def use_backend(name: str):
    """Temporarily switch the process-wide backend (tests and benchmarks)."""
    global _active
    if name not in BACKENDS:
        raise KeyError(f"backend {name!r} not available")
    prev, _active = _active, name
    try:
        yield BACKENDS[name]
    finally:
        _active = prev


def num_threads() -> int:
    raw = os.environ.get("SPARSEKIT_THREADS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def run_rows(fn, rows: int, work: int, *args):
    """Call ``fn(*args, row_start, row_end)`` over ``[0, rows)`` in row chunks."""
    workers = min(num_threads(), rows)
    if workers <= 1 or work < _PARALLEL_MIN_MACS:
        fn(*args, 0, rows)
        return
    bounds = [rows * i // workers for i in range(workers + 1)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *args, lo, hi) for lo, hi in zip(bounds, bounds[1:]) if hi > lo]
        for f in futures:
            f.result()


class MacCounter:
    def __init__(self):
        self.total = 0

    def add(self, n: int):
        self.total += int(n)


_counter: contextvars.ContextVar[MacCounter | None] = contextvars.ContextVar("mac_counter", default=None)


@contextlib.contextmanager
def count_macs():
    """Count multiply-accumulates issued by kernels inside the block.

    >>> with count_macs() as c:
    ...     spmm_f32(w, x)
    >>> c.total == w.nnz * x.shape[1]
    """
    counter = MacCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


def record_macs(n: int):
    c = _counter.get()
    if c is not None:
        c.add(n)
