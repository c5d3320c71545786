"""External agreement indices between two partitions.

All four indices are computed from the r x t contingency table of the two
partitions.  Pair counts use Python integers, so they stay exact far beyond
the int64 range (n up to 1e5 and more).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import GoldStandard, Partition
from .errors import DataError

__all__ = [
    "ContingencyTable",
    "PairCounts",
    "contingency",
    "pair_counts",
    "rand_index",
    "adjusted_rand",
    "fm_index",
    "f_index",
    "INDEX_FUNCTIONS",
]


@dataclass(frozen=True)
class ContingencyTable:
    """Cross-tabulation counts n_ij with row/column marginals."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or (counts < 0).any():
            raise DataError("contingency counts must be a non-negative 2-d grid")
        counts = counts.copy()
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class PairCounts:
    """The classic a/b/c/d decomposition of the n(n-1)/2 item pairs."""

    a: int
    b: int
    c: int
    d: int

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d


def _labels_of(P) -> np.ndarray:
    if isinstance(P, Partition):
        return P.assignment
    if isinstance(P, GoldStandard):
        return P.labels
    return np.asarray(P, dtype=int)


def contingency(C, P) -> ContingencyTable:
    """Contingency table of a reference classification C against a partition P."""
    a = _labels_of(C)
    b = _labels_of(P)
    if a.shape[0] != b.shape[0]:
        raise DataError(f"partitions cover {a.shape[0]} vs {b.shape[0]} items")
    r, t = int(a.max()) + 1, int(b.max()) + 1
    counts = np.zeros((r, t), dtype=np.int64)
    np.add.at(counts, (a, b), 1)
    return ContingencyTable(counts)


def _choose2(x: int) -> int:
    return x * (x - 1) // 2


def pair_counts(T: ContingencyTable) -> PairCounts:
    """Exact a, b, c, d derived from the contingency table."""
    a = sum(_choose2(int(v)) for v in T.counts.ravel())
    b = sum(_choose2(int(v)) for v in T.row_sums) - a
    c = sum(_choose2(int(v)) for v in T.col_sums) - a
    d = _choose2(T.n) - (a + b + c)
    return PairCounts(a, b, c, d)


def rand_index(T: ContingencyTable) -> float:
    """Proportion of item pairs on which the two partitions agree."""
    if T.n < 2:
        raise DataError("rand index needs at least 2 items")
    pc = pair_counts(T)
    return (pc.a + pc.d) / pc.total


def adjusted_rand(T: ContingencyTable) -> float:
    """Rand index corrected for chance under the hypergeometric null.

    A degenerate table (both partitions trivial) has a zero denominator; the
    index is then defined as 0 and a warning is emitted, so benchmark loops
    survive degenerate null-model partitions.
    """
    if T.n < 2:
        raise DataError("adjusted rand needs at least 2 items")
    sum_ij = sum(_choose2(int(v)) for v in T.counts.ravel())
    sum_i = sum(_choose2(int(v)) for v in T.row_sums)
    sum_j = sum(_choose2(int(v)) for v in T.col_sums)
    total = _choose2(T.n)
    expected = sum_i * sum_j / total
    denominator = 0.5 * (sum_i + sum_j) - expected
    if denominator == 0.0:
        warnings.warn("adjusted rand denominator is zero; returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return (sum_ij - expected) / denominator


def fm_index(T: ContingencyTable) -> float:
    """Fowlkes-Mallows index T_k / sqrt(U_k * V_k)."""
    n = T.n
    t_k = int(sum(int(v) ** 2 for v in T.counts.ravel())) - n
    u_k = int(sum(int(v) ** 2 for v in T.row_sums)) - n
    v_k = int(sum(int(v) ** 2 for v in T.col_sums)) - n
    if u_k <= 0 or v_k <= 0:
        raise DataError("FM index undefined: a partition consists of singletons only")
    return t_k / np.sqrt(float(u_k) * float(v_k))


def f_index(T: ContingencyTable, b: float = 1.0) -> float:
    """Precision/recall F measure of the clustering against the classes.

    For each class the best-matching cluster is taken under the weighted
    harmonic mean with weight ``b`` (b=1 weighs precision and recall equally);
    class scores are combined weighted by class size.  An empty intersection
    contributes 0 (the harmonic-mean limit).
    """
    if b <= 0:
        raise DataError(f"F-index weight must be positive, got {b}")
    counts = T.counts.astype(float)
    n = T.n
    row = T.row_sums.astype(float)
    col = T.col_sums.astype(float)
    total = 0.0
    b2 = b * b
    for i in range(counts.shape[0]):
        if row[i] == 0:
            continue
        best = 0.0
        for j in range(counts.shape[1]):
            nij = counts[i, j]
            if nij == 0 or col[j] == 0:
                continue
            prec = nij / col[j]
            rec = nij / row[i]
            f = (b2 + 1.0) * prec * rec / (b2 * prec + rec)
            best = max(best, f)
        total += (row[i] / n) * best
    return total


#: Selector table used by the stability instances and the CLI.
INDEX_FUNCTIONS = {
    "rand": rand_index,
    "adjusted-rand": adjusted_rand,
    "fm": fm_index,
    "f": f_index,
}
