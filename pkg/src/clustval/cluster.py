"""Agglomerative hierarchical clustering, K-means, and the centroid-merge step.

The dendrogram builder keeps a live distance matrix and applies
Lance-Williams-style updates (pair counts for average linkage), which makes
the whole agglomeration O(n^2) per merge.  Merge ties break to the lowest
(row, column) pair and K-means assignment ties to the lowest cluster index,
so every routine is deterministic given its inputs and seed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ._rng import derive_rng
from .data import DataMatrix, Partition, canonical_partition
from .errors import DataError

__all__ = [
    "Linkage",
    "Dendrogram",
    "KMeansInit",
    "euclidean_distances",
    "check_distance_matrix",
    "build_dendrogram",
    "cut_dendrogram",
    "cut_dendrogram_many",
    "cut_labels_many",
    "kmeans",
    "kmeans_with_trace",
    "merge_min_centroid",
]


class Linkage(enum.Enum):
    AVERAGE = "average"
    COMPLETE = "complete"
    SINGLE = "single"


@dataclass(frozen=True)
class KMeansInit:
    """Either random centroid extraction or a caller-provided partition."""

    partition: Partition | None = None

    @classmethod
    def random(cls) -> "KMeansInit":
        return cls(None)

    @classmethod
    def from_partition(cls, partition: Partition) -> "KMeansInit":
        return cls(partition)


@dataclass(frozen=True)
class Dendrogram:
    """Merge list of an agglomerative run.

    ``merges`` has one row per step: (left node, right node, height).  Leaves
    are nodes ``0..n-1``; the merge at step t creates node ``n + t``.
    """

    merges: np.ndarray
    n_leaves: int

    def __post_init__(self):
        merges = np.asarray(self.merges, dtype=float)
        if merges.shape != (self.n_leaves - 1, 3):
            raise DataError(f"expected {self.n_leaves - 1} merges, got shape {merges.shape}")
        merges = merges.copy()
        merges.flags.writeable = False
        object.__setattr__(self, "merges", merges)


def euclidean_distances(D: DataMatrix | np.ndarray) -> np.ndarray:
    """Symmetric matrix of pairwise Euclidean distances between rows."""
    X = D.values if isinstance(D, DataMatrix) else np.asarray(D, dtype=float)
    n = X.shape[0]
    out = np.zeros((n, n))
    block = max(1, int(2**22 // max(1, n * X.shape[1])))
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = X[start:stop, None, :] - X[None, :, :]
        out[start:stop] = np.sqrt((diff * diff).sum(axis=2))
    np.fill_diagonal(out, 0.0)
    return out


def check_distance_matrix(S: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DataError(f"distance matrix must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)) or (S < 0).any():
        raise DataError("distance matrix entries must be finite and non-negative")
    scale = max(1.0, float(np.abs(S).max()))
    if np.abs(S - S.T).max() > tol * scale:
        raise DataError("distance matrix is not symmetric")
    if np.abs(np.diag(S)).max() > 0:
        raise DataError("distance matrix diagonal must be zero")
    return S


def build_dendrogram(S: np.ndarray, linkage: Linkage, check: bool = True) -> Dendrogram:
    """Agglomerate n items by repeatedly merging the closest cluster pair.

    Cluster-to-cluster distance is the mean (average), max (complete) or min
    (single) of the item-to-item distances; equal-distance pairs merge in
    lowest (row, column) order.  ``check=False`` skips input validation for
    submatrices of matrices already validated.
    """
    S = check_distance_matrix(S) if check else np.asarray(S, dtype=float)
    n = S.shape[0]
    if n < 2:
        raise DataError("need at least 2 items to build a dendrogram")
    work = S.astype(float).copy()
    np.fill_diagonal(work, np.inf)
    active = np.ones(n, dtype=bool)
    sizes = np.ones(n, dtype=np.int64)
    node_ids = np.arange(n)
    merges = np.empty((n - 1, 3))
    inf_col = np.inf

    for step in range(n - 1):
        flat = np.argmin(work)
        i, j = divmod(int(flat), n)
        if i > j:  # row-major argmin finds (i < j) first, guard anyway
            i, j = j, i
        height = work[i, j]
        merges[step] = (node_ids[i], node_ids[j], height)

        di, dj = work[i], work[j]
        if linkage is Linkage.AVERAGE:
            merged = (sizes[i] * di + sizes[j] * dj) / (sizes[i] + sizes[j])
        elif linkage is Linkage.COMPLETE:
            merged = np.maximum(di, dj)
        else:
            merged = np.minimum(di, dj)
        merged[~active] = inf_col
        merged[i] = inf_col
        merged[j] = inf_col
        work[i, :] = merged
        work[:, i] = merged
        work[j, :] = inf_col
        work[:, j] = inf_col
        active[j] = False
        sizes[i] += sizes[j]
        node_ids[i] = n + step
    return Dendrogram(merges, n)


def cut_dendrogram(dend: Dendrogram, k: int) -> Partition:
    """Partition equal to stopping the agglomeration after n-k merges."""
    return cut_dendrogram_many(dend, [k])[k]


def cut_dendrogram_many(dend: Dendrogram, ks) -> dict[int, Partition]:
    """Cuts at several levels from a single replay of the merge list."""
    return {k: canonical_partition(labels) for k, labels in cut_labels_many(dend, ks).items()}


def cut_labels_many(dend: Dendrogram, ks) -> dict[int, np.ndarray]:
    """Raw (non-canonical) cluster labels at several cut levels, one replay.

    Labels are merge-tree representatives, not contiguous cluster ids; use
    ``cut_dendrogram`` / ``cut_dendrogram_many`` for canonical partitions.
    """
    n = dend.n_leaves
    ks = sorted({int(k) for k in ks})
    if not ks or ks[0] < 1 or ks[-1] > n:
        raise DataError(f"cut levels must be in [1, {n}], got {ks}")
    # replay merges by maintaining live leaf labels directly: when clusters
    # i and j merge, leaves labeled j take label i
    labels = np.arange(n)
    node_label = np.empty(2 * n - 1, dtype=int)  # node id -> leaf-label representative
    node_label[:n] = np.arange(n)
    out: dict[int, np.ndarray] = {}
    want = set(ks)
    if n in want:
        out[n] = labels.copy()
    for step in range(n - ks[0]):
        left, right, _ = dend.merges[step]
        a = node_label[int(left)]
        b = node_label[int(right)]
        labels[labels == b] = a
        node_label[n + step] = a
        k_now = n - step - 1
        if k_now in want:
            out[k_now] = labels.copy()
    return out


def _centroids(X: np.ndarray, assignment: np.ndarray, k: int) -> np.ndarray:
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, assignment, X)
    counts = np.bincount(assignment, minlength=k).astype(float)
    return sums / counts[:, None]


def _sq_distances_to(X: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2


def _lloyd(X: np.ndarray, k: int, centroids: np.ndarray, niter: int):
    n = X.shape[0]
    assignment = np.full(n, -1, dtype=int)
    objective: list[float] = []
    for _ in range(niter):
        d2 = _sq_distances_to(X, centroids)
        new_assignment = np.argmin(d2, axis=1)

        # keep all k clusters alive: move the point farthest from its
        # centroid into each empty cluster
        counts = np.bincount(new_assignment, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            own = d2[np.arange(n), new_assignment].copy()
            own[counts[new_assignment] <= 1] = -np.inf
            donor = int(np.argmax(own))
            counts[new_assignment[donor]] -= 1
            new_assignment[donor] = empty
            counts[empty] += 1

        centroids = _centroids(X, new_assignment, k)
        objective.append(float(((X - centroids[new_assignment]) ** 2).sum()))
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
    return assignment, centroids, objective


def kmeans_with_trace(
    D: DataMatrix,
    k: int,
    init: KMeansInit | None = None,
    niter: int = 100,
    seed: int = 0,
) -> tuple[Partition, list[float]]:
    """Lloyd iterations plus the per-iteration objective values."""
    X = D.values
    n = X.shape[0]
    if not 2 <= k <= n:
        raise DataError(f"k must be in [2, {n}], got {k}")
    if niter < 1:
        raise DataError("niter must be >= 1")
    init = init or KMeansInit.random()
    if init.partition is None:
        rng = derive_rng(seed, "kmeans-init", k)
        centroids = X[rng.choice(n, size=k, replace=False)]
    else:
        p = init.partition
        if p.k != k or p.n != n:
            raise DataError("initial partition does not match the requested k and n")
        centroids = _centroids(X, p.assignment, k)
    assignment, _, objective = _lloyd(X, k, centroids, niter)
    return Partition(assignment, k), objective


def kmeans(
    D: DataMatrix,
    k: int,
    init: KMeansInit | None = None,
    niter: int = 100,
    seed: int = 0,
) -> Partition:
    """K-means clustering; stops when the assignment is stable or at niter."""
    partition, _ = kmeans_with_trace(D, k, init, niter, seed)
    return partition


def merge_min_centroid(D: DataMatrix, P: Partition) -> Partition:
    """Union the two clusters whose centroids are closest in Euclidean distance."""
    if P.k < 2:
        raise DataError("need at least 2 clusters to merge")
    cents = _centroids(D.values, P.assignment, P.k)
    d2 = ((cents[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    flat = int(np.argmin(d2))
    i, j = divmod(flat, P.k)
    if i > j:
        i, j = j, i
    merged = P.assignment.copy()
    merged[merged == j] = i
    merged[merged > j] -= 1
    return Partition(merged, P.k - 1)
