"""Single-linkage clustering of point clouds cut at a distance threshold.

Cut at ``tau``, single linkage is exactly the set of connected components of
the graph joining every pair of points at Euclidean distance <= ``tau``.
:func:`cluster_grid` finds those components with a uniform spatial hash and a
vectorized union-find; :func:`cluster_bruteforce` checks all pairs and serves
as the reference. Both return identical, deterministically ordered output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points, check_positive

__all__ = [
    "ClusterParams",
    "Cluster",
    "ClusterStats",
    "cluster_bruteforce",
    "cluster_grid",
    "cluster_stats",
    "SingleLinkageClustering",
]

DEFAULT_TAU = 0.06
DEFAULT_MIN_POINTS = 50

# Sub-cells have edge tau/sqrt(3) shrunk by this factor, so any two points
# sharing a sub-cell are strictly closer than tau even after rounding.
_CELL_SHRINK = 1.0 - 1e-9
# Beyond this |coordinate| / cell-edge ratio, floor() rounding could exceed the
# shrink margin; same-cell pairs are then checked explicitly.
_TRUSTED_CELL_RATIO = 1e6
# Upper bound on candidate pairs materialized at once.
_PAIR_CHUNK = 2_000_000
# Dense cell pairs are first probed with at most this many points per cell.
_PROBE = 8


@dataclass(frozen=True)
class ClusterParams:
    tau: float = DEFAULT_TAU
    min_points: int = DEFAULT_MIN_POINTS

    def __post_init__(self):
        check_positive(self.tau, "tau")
        check_positive(self.min_points, "min_points", integer=True)
        if not np.isfinite(self.tau):
            raise ValueError("tau must be finite")


@dataclass(frozen=True, eq=False)
class Cluster:
    """Member indices (ascending) with their centroid and axis-aligned bounds."""

    indices: np.ndarray
    centroid: np.ndarray
    aabb_min: np.ndarray
    aabb_max: np.ndarray

    @classmethod
    def from_indices(cls, points: np.ndarray, indices) -> "Cluster":
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            raise ValueError("a cluster needs at least one point")
        if np.any(np.diff(idx) <= 0):
            raise ValueError("cluster indices must be strictly increasing")
        members = points[idx]
        # cumsum accumulates in ascending index order, so the result is reproducible
        centroid = np.cumsum(members, axis=0)[-1] / idx.size
        arrays = [idx, centroid, members.min(axis=0), members.max(axis=0)]
        for a in arrays:
            a.setflags(write=False)
        return cls(*arrays)

    def __len__(self):
        return int(self.indices.size)

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def __eq__(self, other):
        if not isinstance(other, Cluster):
            return NotImplemented
        return (
            np.array_equal(self.indices, other.indices)
            and np.array_equal(self.centroid, other.centroid)
            and np.array_equal(self.aabb_min, other.aabb_min)
            and np.array_equal(self.aabb_max, other.aabb_max)
        )

    __hash__ = None

    def __repr__(self):
        c = ", ".join(f"{v:.3f}" for v in self.centroid)
        return f"Cluster(size={self.size}, first={int(self.indices[0])}, centroid=({c}))"


def _pair_sqdist(xyz, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Squared distances for index pairs; ``xyz`` is a tuple of coordinate columns."""
    x, y, z = xyz
    dx = x[i] - x[j]
    dy = y[i] - y[j]
    dz = z[i] - z[j]
    return dx * dx + dy * dy + dz * dz


def cluster_bruteforce(cloud, params: ClusterParams = ClusterParams()) -> list[Cluster]:
    """Reference O(n^2) clustering: BFS over the full tau-neighborhood graph."""
    pts = check_points(cloud)
    n = len(pts)
    if n == 0:
        return []
    tau2 = params.tau * params.tau
    xyz = tuple(np.ascontiguousarray(pts[:, k]) for k in range(3))
    adjacency = np.empty((n, n), dtype=bool)
    cols = np.arange(n)
    for r in range(n):
        adjacency[r] = _pair_sqdist(xyz, np.full(n, r), cols) <= tau2

    visited = np.zeros(n, dtype=bool)
    components = []
    for seed in range(n):
        if visited[seed]:
            continue
        members = np.zeros(n, dtype=bool)
        members[seed] = True
        frontier = members.copy()
        while frontier.any():
            reached = adjacency[frontier].any(axis=0) & ~members
            members |= reached
            frontier = reached
        visited |= members
        components.append(np.flatnonzero(members))

    kept = [c for c in components if c.size >= params.min_points]
    kept.sort(key=lambda c: (-c.size, int(c[0])))
    return [Cluster.from_indices(pts, c) for c in kept]


def _half_offsets(reach):
    """Neighbor offsets with d > 0 lexicographically, nearest cells first."""
    offs = [d for d in product(range(-reach, reach + 1), repeat=3) if d > (0, 0, 0)]
    offs.sort(key=lambda d: (sum(max(abs(v) - 1, 0) ** 2 for v in d), sum(v * v for v in d), d))
    return np.array(offs, dtype=np.int64)


# Points within tau are at most ceil(sqrt(3)) = 2 sub-cells apart per axis.
_HALF_OFFSETS = _half_offsets(2)


def _axis_rank(values, sorted_unique):
    """Rank of each value among ``sorted_unique``; -1 where the value is absent."""
    pos = np.searchsorted(sorted_unique, values)
    pos_c = np.minimum(pos, len(sorted_unique) - 1)
    return np.where(sorted_unique[pos_c] == values, pos_c, -1)


def _candidate_pairs(starts, counts, a, b, same_cell):
    """Yield (i, j) point-position arrays for all point pairs of cell pairs (a, b)."""
    m = counts[a] * counts[b]
    bounds = np.cumsum(m)
    lo = 0
    while lo < len(a):
        base = bounds[lo - 1] if lo else 0
        hi = int(np.searchsorted(bounds, base + _PAIR_CHUNK, side="right"))
        hi = max(hi, lo + 1)
        aa, bb, mm = a[lo:hi], b[lo:hi], m[lo:hi]
        total = int(mm.sum())
        owner = np.repeat(np.arange(hi - lo), mm)
        local = np.arange(total) - np.repeat(np.cumsum(mm) - mm, mm)
        nb = counts[bb][owner]
        i = starts[aa][owner] + local // nb
        j = starts[bb][owner] + local % nb
        if same_cell:
            keep = i < j
            i, j = i[keep], j[keep]
        yield i, j
        lo = hi


def _union(parent: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Vectorized union-find over edges (i, j).

    ``parent`` must be fully compressed (every element points at its root) and
    every root must be the smallest element of its set; both hold on return.
    Each round hooks every root with a crossing edge under the smallest root
    it touches, then compresses by pointer jumping.
    """
    while i.size:
        ri, rj = parent[i], parent[j]
        crossing = ri != rj
        if not crossing.any():
            break
        i, j, ri, rj = i[crossing], j[crossing], ri[crossing], rj[crossing]
        np.minimum.at(parent, np.maximum(ri, rj), np.minimum(ri, rj))
        while True:
            jumped = parent[parent]
            if np.array_equal(jumped, parent):
                break
            parent = jumped
    return parent


def _grid_components(pts: np.ndarray, tau: float) -> np.ndarray:
    """Component root (smallest original index) for every point."""
    n = len(pts)
    edge = tau / np.sqrt(3.0) * _CELL_SHRINK
    cell = np.floor(pts / edge).astype(np.int64)
    lo = cell.min(axis=0) - 2
    span = cell.max(axis=0) - lo + 3
    if float(span[0]) * float(span[1]) * float(span[2]) < 2.0**62:
        # dense linear key: a neighbor's key is the cell's key plus a constant
        c = cell - lo
        key = (c[:, 0] * span[1] + c[:, 1]) * span[2] + c[:, 2]
        strides = np.array([span[1] * span[2], span[2], 1], dtype=np.int64)

        def neighbor_keys(ukey, ucell, off):
            return ukey + int(off @ strides), slice(None)

    else:
        # sparse fallback for extreme extents: rank coordinates per axis
        axes = [np.unique(cell[:, k]) for k in range(3)]
        dims = np.array([len(a) for a in axes], dtype=np.int64)

        def ranked(cc):
            r = np.stack([_axis_rank(cc[:, k], axes[k]) for k in range(3)], axis=1)
            return (r[:, 0] * dims[1] + r[:, 1]) * dims[2] + r[:, 2], (r >= 0).all(axis=1)

        key = ranked(cell)[0]

        def neighbor_keys(ukey, ucell, off):
            k, present = ranked(ucell + off)
            return k[present], np.flatnonzero(present)

    order = np.argsort(key, kind="stable")
    xyz = tuple(np.ascontiguousarray(pts[order, k]) for k in range(3))
    ukeys, starts, counts = np.unique(key[order], return_index=True, return_counts=True)
    ucell = cell[order[starts]]
    tau2 = tau * tau

    def link(parent, a, b, same_cell, sizes=counts):
        for i, j in _candidate_pairs(starts, sizes, a, b, same_cell):
            close = _pair_sqdist(xyz, i, j) <= tau2
            parent = _union(parent, i[close], j[close])
        return parent

    probe_sizes = np.minimum(counts, _PROBE)

    # work in cell-sorted positions: members of a cell are contiguous
    cell_of = np.repeat(np.arange(len(starts)), counts)
    if np.abs(pts).max() / edge < _TRUSTED_CELL_RATIO:
        parent = starts[cell_of].astype(np.int64)
    else:
        parent = np.arange(n, dtype=np.int64)
        multi = np.flatnonzero(counts > 1)
        parent = link(parent, multi, multi, same_cell=True)

    for off in _HALF_OFFSETS:
        nkey, a = neighbor_keys(ukeys, ucell, off)
        a = np.arange(len(ukeys))[a]
        pos = np.minimum(np.searchsorted(ukeys, nkey), len(ukeys) - 1)
        hit = ukeys[pos] == nkey
        a, b = a[hit], pos[hit]
        # skip cell pairs that earlier offsets already connected
        apart = parent[starts[a]] != parent[starts[b]]
        if not apart.any():
            continue
        a, b = a[apart], b[apart]
        parent = link(parent, a, b, same_cell=False, sizes=probe_sizes)
        # exhaustive pass only where the probe did not already see every pair
        rest = (parent[starts[a]] != parent[starts[b]]) & ((counts[a] > _PROBE) | (counts[b] > _PROBE))
        if rest.any():
            parent = link(parent, a[rest], b[rest], same_cell=False)

    # relabel every component by its smallest original index
    smallest = np.full(n, n, dtype=np.int64)
    np.minimum.at(smallest, parent, order)
    root = np.empty(n, dtype=np.int64)
    root[order] = smallest[parent]
    return root


def _assemble(pts: np.ndarray, root: np.ndarray, min_points: int) -> list[Cluster]:
    grouped = np.argsort(root, kind="stable")
    uroots, first, sizes = np.unique(root[grouped], return_index=True, return_counts=True)
    keep = np.flatnonzero(sizes >= min_points)
    # roots are the smallest member index, so they double as the tie-break key
    keep = keep[np.lexsort((uroots[keep], -sizes[keep]))]
    return [Cluster.from_indices(pts, grouped[first[k] : first[k] + sizes[k]]) for k in keep]


def cluster_grid(cloud, params: ClusterParams = ClusterParams()) -> list[Cluster]:
    """Grid-accelerated clustering; output equals :func:`cluster_bruteforce`.

    Clusters are ordered by descending size, ties broken by smallest member
    index. Components smaller than ``params.min_points`` are dropped.
    """
    pts = check_points(cloud)
    if len(pts) == 0:
        return []
    root = _grid_components(pts, params.tau)
    return _assemble(pts, root, params.min_points)


@dataclass(frozen=True)
class ClusterStats:
    count: int
    sizes: tuple[int, ...]
    fractions: tuple[float, ...]
    n_points: int | None = None
    dropped_points: int | None = field(default=None)


def cluster_stats(clusters, n_points=None) -> ClusterStats:
    """Summarize cluster sizes; ``fractions`` are relative to ``n_points``.

    When ``n_points`` is omitted the fractions are relative to the clustered
    points only.
    """
    sizes = tuple(len(c) for c in clusters)
    total = n_points if n_points is not None else sum(sizes)
    fractions = tuple(s / total for s in sizes) if total else ()
    dropped = None if n_points is None else n_points - sum(sizes)
    return ClusterStats(len(sizes), sizes, fractions, n_points, dropped)


class SingleLinkageClustering(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`cluster_grid`.

    Parameters
    ----------
    tau : float, default=0.06
        Linkage distance cutoff in meters; pairs at distance <= tau are linked.
    min_points : int, default=50
        Components with fewer points are labelled noise (-1).
    algorithm : {"grid", "bruteforce"}, default="grid"

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
        Cluster index per point in output order, -1 for dropped points.
    clusters_ : list of Cluster
    n_clusters_ : int
    """

    def __init__(self, tau=DEFAULT_TAU, min_points=DEFAULT_MIN_POINTS, algorithm="grid"):
        self.tau = tau
        self.min_points = min_points
        self.algorithm = algorithm

    def fit(self, X, y=None):
        X = check_points(X, name="X")
        params = ClusterParams(self.tau, self.min_points)
        if self.algorithm == "grid":
            clusters = cluster_grid(X, params)
        elif self.algorithm == "bruteforce":
            clusters = cluster_bruteforce(X, params)
        else:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        labels = np.full(len(X), -1, dtype=np.int64)
        for k, c in enumerate(clusters):
            labels[c.indices] = k
        self.clusters_ = clusters
        self.labels_ = labels
        self.n_clusters_ = len(clusters)
        self.n_features_in_ = 3
        return self

    def stats(self) -> ClusterStats:
        check_is_fitted(self, "clusters_")
        return cluster_stats(self.clusters_, len(self.labels_))
