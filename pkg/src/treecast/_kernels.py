"""Flat-array graph kernels for the per-round delivery sweeps.

The simulator runs one breadth-first sweep per substream per round (unit-cost
hops for delay, 0/1-cost for the redundant-edge rate discount), which is the
only hot loop in the package.  Graphs come in CSR form.  With numba available
the kernels are jit-compiled; setting ``TREECAST_PURE_NUMPY=1`` (or not having
numba installed) selects the plain-Python/numpy fallbacks.  See
``benchmarks/bench_kernels.py`` for a comparison of the two paths.
"""

from __future__ import annotations

import os

import numpy as np

PURE_NUMPY = os.environ.get("TREECAST_PURE_NUMPY", "") not in ("", "0")

try:
    if PURE_NUMPY:
        raise ImportError("pure-numpy path requested")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # numba missing or explicitly disabled
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


UNREACHED = np.int64(-1)


def _bfs_hops_impl(indptr, targets, n, src):
    """Unit-cost hop counts from ``src``; -1 where unreachable."""
    hops = np.full(n, -1, np.int64)
    queue = np.empty(n, np.int64)
    head = 0
    tail = 0
    hops[src] = 0
    queue[tail] = src
    tail += 1
    while head < tail:
        v = queue[head]
        head += 1
        for k in range(indptr[v], indptr[v + 1]):
            w = targets[k]
            if hops[w] < 0:
                hops[w] = hops[v] + 1
                queue[tail] = w
                tail += 1
    return hops


def _bfs01_impl(indptr, targets, weight, n, src):
    """0/1-weighted distances from ``src`` (deque algorithm); -1 unreachable."""
    big = np.int64(1) << 40
    dist = np.full(n, big, np.int64)
    cap = 2 * (targets.shape[0] + 1) + 2
    deque = np.empty(cap, np.int64)
    head = cap // 2
    tail = cap // 2
    dist[src] = 0
    deque[tail] = src
    tail += 1
    while head < tail:
        v = deque[head]
        head += 1
        for k in range(indptr[v], indptr[v + 1]):
            w = targets[k]
            nd = dist[v] + weight[k]
            if nd < dist[w]:
                dist[w] = nd
                if weight[k] == 0:
                    head -= 1
                    deque[head] = w
                else:
                    deque[tail] = w
                    tail += 1
    out = np.where(dist >= big, np.int64(-1), dist)
    return out


if HAVE_NUMBA:
    bfs_hops = njit(cache=True)(_bfs_hops_impl)
    bfs01 = njit(cache=True)(_bfs01_impl)
else:
    bfs_hops = _bfs_hops_impl
    bfs01 = _bfs01_impl


def build_csr(n: int, edges) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pack ``(src, dst, weight)`` triples into CSR arrays over ``n`` nodes."""
    deg = np.zeros(n + 1, np.int64)
    es = list(edges)
    for s, _, _ in es:
        deg[s + 1] += 1
    indptr = np.cumsum(deg)
    targets = np.empty(len(es), np.int64)
    weight = np.empty(len(es), np.int64)
    fill = indptr[:-1].copy()
    for s, d, w in es:
        targets[fill[s]] = d
        weight[fill[s]] = w
        fill[s] += 1
    return indptr, targets, weight
