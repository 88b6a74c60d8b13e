"""Ordered parallel map over sample indices.

Workers are forked so they inherit the precomputed patch structures.
Results come back in submission order, and every reduction happens in the
parent, so outputs do not depend on the worker count.  BLAS is pinned to one
thread everywhere so dense kernels sum in a fixed order.
"""
from __future__ import annotations

import multiprocessing as mp
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator

from threadpoolctl import threadpool_limits

_TASK: Callable = None


def _call(i):
    return _TASK(i)


def _init_worker():
    threadpool_limits(1)


@contextmanager
def ordered_map(fn: Callable, threads: int = 1):
    """Yield a ``map``-like callable running ``fn`` on ``threads`` processes.

    Inside the context any other function passed to the mapper runs serially
    in the parent.
    """
    global _TASK
    with threadpool_limits(1):
        if threads <= 1:
            yield lambda f, items: map(f, items)
            return
        _TASK = fn
        ctx = mp.get_context("fork")
        with ctx.Pool(threads, initializer=_init_worker) as pool:
            def mapper(f, items: Iterable) -> Iterator:
                if f is not fn:
                    return map(f, items)
                return pool.imap(_call, items, chunksize=1)
            try:
                yield mapper
            finally:
                _TASK = None
