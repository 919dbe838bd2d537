"""Density clustering on a precomputed similarity-derived distance matrix.

Distances are ``1 - similarity`` with a zero diagonal. Each row carries a
sorted neighbor index so an epsilon range query is a binary search plus a
slice. Neighborhood work is fanned out to worker processes (fork, shared
memory); the merge into clusters is a deterministic reduction, so labels
do not depend on the worker count.

With ``min_pts=1`` every point is core (a point counts itself), and the
result equals connected components of the epsilon-thresholded graph; a
plain union-find over all pairs is provided as an independent oracle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _cc

DETECTION_EPSILON = 0.69
EVOLUTION_EPSILON = 0.80
NOISE = -1

_PARALLEL_MIN_ROWS = 512  # below this, worker overhead dominates


@dataclass
class DbscanParams:
    epsilon: float = DETECTION_EPSILON
    min_pts: int = 1
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.min_pts < 1 or self.threads < 1:
            raise ValueError("min_pts and threads must be >= 1")


class DistanceMatrix:
    """Symmetric distances in [0, 1] plus a per-row sorted neighbor index."""

    def __init__(self, da, build_index: bool = True, threads: int = 1, validate: bool = True):
        da = np.ascontiguousarray(da, dtype=np.float64)
        if da.ndim != 2 or da.shape[0] != da.shape[1]:
            raise ValueError("distance matrix must be square")
        if validate and da.size:
            if np.any(np.diagonal(da) != 0):
                raise ValueError("diagonal must be zero")
            if da.min() < 0 or da.max() > 1:
                raise ValueError("distances must lie in [0, 1]")
        self.da = da
        self.order = None
        self.sorted_dist = None
        if build_index:
            self.build_index(threads=threads)

    @property
    def n(self) -> int:
        return self.da.shape[0]

    def build_index(self, threads: int = 1) -> None:
        n = self.n
        if n == 0:
            self.order = np.empty((0, 0), dtype=np.int32)
            self.sorted_dist = np.empty((0, 0), dtype=np.float64)
            return
        if threads > 1 and n >= _PARALLEL_MIN_ROWS:
            self.order, self.sorted_dist = _parallel_index(self.da, threads)
        else:
            order = np.empty((n, n), dtype=np.int32)
            dist = np.empty((n, n), dtype=np.float64)
            _fill_index_rows(self.da, order, dist, 0, n)
            self.order, self.sorted_dist = order, dist

    def neighbors(self, i: int, eps: float) -> np.ndarray:
        """Indices j != i with distance[i, j] <= eps, ascending order."""
        if self.order is None:
            self.build_index()
        hi = int(np.searchsorted(self.sorted_dist[i], eps, side="right"))
        nbrs = self.order[i, :hi]
        return np.sort(nbrs[nbrs != i]).astype(np.intp)


def _fill_index_rows(da, order, dist, lo, hi):
    for i in range(lo, hi):
        o = np.argsort(da[i], kind="stable").astype(np.int32)
        order[i] = o
        dist[i] = da[i, o]


# fork workers read these after the pool inherits the parent's memory
_WORK: dict = {}


def _index_worker(args):
    lo, hi = args
    from multiprocessing import shared_memory

    n = _WORK["n"]
    so = shared_memory.SharedMemory(name=_WORK["order_shm"])
    sd = shared_memory.SharedMemory(name=_WORK["dist_shm"])
    try:
        order = np.ndarray((n, n), dtype=np.int32, buffer=so.buf)
        dist = np.ndarray((n, n), dtype=np.float64, buffer=sd.buf)
        _fill_index_rows(_WORK["da"], order, dist, lo, hi)
    finally:
        so.close()
        sd.close()
    return hi - lo


def _chunk_bounds(n, parts):
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _parallel_index(da, threads):
    from multiprocessing import get_context, shared_memory

    n = da.shape[0]
    try:
        ctx = get_context("fork")
    except ValueError:  # fork unavailable on this platform
        order = np.empty((n, n), dtype=np.int32)
        dist = np.empty((n, n), dtype=np.float64)
        _fill_index_rows(da, order, dist, 0, n)
        return order, dist
    so = shared_memory.SharedMemory(create=True, size=n * n * 4)
    sd = shared_memory.SharedMemory(create=True, size=n * n * 8)
    _WORK.update({"da": da, "n": n, "order_shm": so.name, "dist_shm": sd.name})
    try:
        with ctx.Pool(processes=threads) as pool:
            pool.map(_index_worker, _chunk_bounds(n, threads))
        order = np.ndarray((n, n), dtype=np.int32, buffer=so.buf).copy()
        dist = np.ndarray((n, n), dtype=np.float64, buffer=sd.buf).copy()
    finally:
        _WORK.clear()
        so.close()
        so.unlink()
        sd.close()
        sd.unlink()
    return order, dist


def _neighbor_chunk(dm: DistanceMatrix, eps: float, lo: int, hi: int):
    counts = np.empty(hi - lo, dtype=np.int64)
    chunks = []
    for i in range(lo, hi):
        nbrs = dm.neighbors(i, eps)
        counts[i - lo] = nbrs.shape[0]
        chunks.append(nbrs.astype(np.int32))
    return counts, (np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int32))


def _neighbor_worker(args):
    lo, hi = args
    return _neighbor_chunk(_WORK["dm"], _WORK["eps"], lo, hi)


def _all_neighbors(dm: DistanceMatrix, eps: float, threads: int):
    """Per-row neighbor counts and one concatenated neighbor array."""
    n = dm.n
    if threads > 1 and n >= _PARALLEL_MIN_ROWS:
        from multiprocessing import get_context

        try:
            ctx = get_context("fork")
        except ValueError:
            ctx = None
        if ctx is not None:
            _WORK.update({"dm": dm, "eps": eps})
            try:
                with ctx.Pool(processes=threads) as pool:
                    parts = pool.map(_neighbor_worker, _chunk_bounds(n, threads))
            finally:
                _WORK.clear()
            counts = np.concatenate([p[0] for p in parts])
            flat = np.concatenate([p[1] for p in parts])
            return counts, flat
    return _neighbor_chunk(dm, eps, 0, n)


def from_similarity(k: np.ndarray, tol: float = 1e-9, build_index: bool = True,
                    threads: int = 1) -> DistanceMatrix:
    """Distance matrix ``1 - k`` with the diagonal forced to zero.

    Similarities outside [0, 1] by more than `tol` raise (they signal an
    invalid weight vector); within tolerance they are clipped.
    """
    k = np.asarray(k, dtype=np.float64)
    if np.any(k < -tol) or np.any(k > 1 + tol):
        raise ValueError("similarity entries outside [0, 1] beyond tolerance")
    da = 1.0 - np.clip(k, 0.0, 1.0)
    np.fill_diagonal(da, 0.0)
    return DistanceMatrix(da, build_index=build_index, threads=threads, validate=False)


def get_neighbors(dm, i: int, eps: float) -> np.ndarray:
    """Epsilon range query; accepts a DistanceMatrix or a raw square array."""
    if not isinstance(dm, DistanceMatrix):
        dm = DistanceMatrix(np.asarray(dm, dtype=np.float64))
    return dm.neighbors(i, eps)


def dbscan(dm, eps: float, min_pts: int = 1, threads: int = 1) -> np.ndarray:
    """Density clustering with precomputed distances; labels noise as -1.

    A point is core when its epsilon neighborhood, counting the point
    itself, holds at least `min_pts` points; with min_pts=1 every point is
    core and clusters are the connected components of the epsilon graph.
    Border points join the cluster of their lowest-index core neighbor.
    Cluster ids are dense, in order of first member index, and identical
    for any worker count.
    """
    if not isinstance(dm, DistanceMatrix):
        dm = DistanceMatrix(np.ascontiguousarray(dm, dtype=np.float64), threads=threads)
    n = dm.n
    if n == 0:
        return np.empty(0, dtype=np.int64)
    counts, flat = _all_neighbors(dm, eps, threads)
    core = counts + 1 >= min_pts
    rows = np.repeat(np.arange(n), counts)
    keep = core[rows] & core[flat]
    graph = sp.csr_matrix(
        (np.ones(int(keep.sum()), dtype=np.int8), (rows[keep], flat[keep])), shape=(n, n)
    )
    n_comp, comp = _cc(graph, directed=False)
    labels = np.full(n, NOISE, dtype=np.int64)
    labels[core] = comp[core]
    if not np.all(core):
        offsets = np.concatenate(([0], np.cumsum(counts)))
        for i in np.flatnonzero(~core):
            nbrs = flat[offsets[i]:offsets[i + 1]]
            core_nbrs = nbrs[core[nbrs]]
            if core_nbrs.size:
                labels[i] = comp[core_nbrs.min()]
    return canonical_labels(labels)


def canonical_labels(raw) -> np.ndarray:
    """Renumber cluster ids densely in order of first member index; keep -1."""
    raw = np.asarray(raw)
    out = np.full(raw.shape[0], NOISE, dtype=np.int64)
    mapping: dict[int, int] = {}
    for i, lab in enumerate(raw):
        if lab == NOISE:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


class UnionFind:
    """Disjoint sets with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def connected_components_labels(dm, eps: float) -> np.ndarray:
    """Union-find over all pairs at distance <= eps (the min_pts=1 oracle)."""
    da = dm.da if isinstance(dm, DistanceMatrix) else np.asarray(dm, dtype=np.float64)
    n = da.shape[0]
    uf = UnionFind(n)
    ii, jj = np.nonzero(np.triu(da <= eps, 1))
    for a, b in zip(ii.tolist(), jj.tolist()):
        uf.union(a, b)
    return canonical_labels(np.array([uf.find(i) for i in range(n)], dtype=np.int64))
