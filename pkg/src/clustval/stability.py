"""Stability-based estimation of the number of clusters.

Everything in this module is an incarnation of one scheme: perturb the data,
cluster the perturbations, collect a statistic on how consistent the
clustering solutions are, and read the number of clusters off the per-k
statistics.  ``run_stability_statistic`` executes that scheme generically for
a pluggable wiring; the named measures (ME, Clest, Levine-Domany, Roth,
BagClust1/2, Consensus and its loop-switched approximation FC) are also
implemented directly with the same seed-derivation keys, so each direct
implementation can be checked bitwise against its wiring.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._rng import child_seed, derive_rng
from .cluster import Linkage, build_dendrogram, cut_dendrogram, cut_labels_many, euclidean_distances
from .data import DataMatrix, Partition
from .datagen import DgpSpec, NullModel, generate_null, subsample, subsample_rows
from .errors import DataError
from .indices import INDEX_FUNCTIONS, contingency
from .measures import (
    NO_STRUCTURE,
    Clusterer,
    CurveSeries,
    HierClusterer,
    Prediction,
    _gap_first_crossing,
    _gap_majority,
    _gap_step_statistics,
    _safe_log_wcss,
    wcss,
)

__all__ = [
    "StabilityConfig",
    "NearestCentroidClassifier",
    "max_overlap_matching",
    "mecca",
    "bagclust1",
    "bagclust2",
    "MeResult",
    "me_run",
    "ClestResult",
    "clest_run",
    "levine_domany_run",
    "roth_run",
    "ConsensusState",
    "ConsensusResult",
    "consensus_run",
    "fc_run",
    "consensus_to_distance",
    "Wiring",
    "run_stability_statistic",
    "paradigm_me_run",
    "paradigm_clest_run",
    "paradigm_levine_domany_run",
    "paradigm_roth_run",
    "paradigm_consensus_run",
    "paradigm_bagclust1",
    "paradigm_bagclust2",
    "paradigm_gap_predict",
]

#: Stabilization threshold of the consensus prediction rule.
CONSENSUS_STABILITY_TAU = 0.05

#: Default significance parameters of the Clest decision rule.
CLEST_P_MAX = 0.05
CLEST_D_MIN = 0.05

#: Learning share of the Clest split; the remainder trains the classifier.
CLEST_LEARNING_FRACTION = 0.66

_MAX_REDRAWS = 100


@dataclass(frozen=True)
class StabilityConfig:
    """Shared knobs of the resampling loop."""

    k_min: int = 2
    k_max: int = 10
    H: int = 20
    beta: float = 0.8
    alpha: float = 0.0
    dgp: DgpSpec | None = None
    clusterers: tuple[Clusterer, ...] = ()
    external_index: str = "adjusted-rand"
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.k_min <= self.k_max:
            raise DataError(f"need 2 <= k_min <= k_max, got [{self.k_min}, {self.k_max}]")
        if self.H < 1:
            raise DataError("H must be >= 1")
        if not 0.0 < self.beta < 1.0:
            raise DataError(f"beta must be in (0,1), got {self.beta}")
        if not 0.0 <= self.alpha < 1.0:
            raise DataError(f"alpha must be in [0,1), got {self.alpha}")
        if self.external_index not in INDEX_FUNCTIONS:
            raise DataError(f"unknown external index {self.external_index!r}")

    @property
    def clusterer(self) -> Clusterer:
        if not self.clusterers:
            raise DataError("the configuration names no clustering algorithm")
        return self.clusterers[0]

    def ks(self) -> range:
        return range(self.k_min, self.k_max + 1)


# ---------------------------------------------------------------------------
# Seed keys shared by the direct implementations and the paradigm engine
# ---------------------------------------------------------------------------

def _dgp_seed(seed: int, tag: str, k: int, h: int, j: int, attempt: int = 0) -> int:
    return child_seed(seed, tag, "dgp", k, h, j, attempt)


def _outer_dgp_seed(seed: int, tag: str, h: int, j: int, attempt: int = 0) -> int:
    return child_seed(seed, tag, "dgp-outer", h, j, attempt)


def _split_seed(seed: int, tag: str, k: int, h: int, i: int, attempt: int = 0) -> int:
    return child_seed(seed, tag, "split", k, h, i, attempt)


def _cluster_seed(seed: int, tag: str, k: int, h: int, edge: int) -> int:
    return child_seed(seed, tag, "cl", k, h, edge)


def _base_seed(seed: int, tag: str, k: int) -> int:
    return child_seed(seed, tag, "base", k)


def _split_rows(n: int, alpha: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random split into ceil(alpha n) training rows and the remaining learning rows."""
    if alpha == 0.0:
        return np.empty(0, dtype=int), np.arange(n)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = math.ceil(alpha * n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _bootstrap_rows(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, n, size=n)


class _RedrawRound(Exception):
    """Raised inside a resampling round to request a redraw."""


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NearestCentroidClassifier:
    """Diagonal linear discriminant with equal per-feature variance.

    Under a shared spherical covariance the discriminant reduces to assigning
    every vector to the closest class centroid.
    """

    centroids: np.ndarray
    trained: bool = True

    @classmethod
    def fit(cls, X: np.ndarray, labels: np.ndarray, k: int) -> "NearestCentroidClassifier":
        centroids = np.empty((k, X.shape[1]))
        for c in range(k):
            rows = X[labels == c]
            if rows.shape[0] == 0:
                raise _RedrawRound(f"class {c} has no training members")
            centroids[c] = rows.mean(axis=0)
        return cls(centroids)

    def predict(self, X: np.ndarray) -> np.ndarray:
        d2 = ((X[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)


# ---------------------------------------------------------------------------
# Partition alignment
# ---------------------------------------------------------------------------

def _labels_k(P) -> tuple[np.ndarray, int]:
    if isinstance(P, Partition):
        return P.assignment, P.k
    a = np.asarray(P, dtype=int)
    return a, int(a.max()) + 1


def max_overlap_matching(P1, P2) -> tuple[np.ndarray, int]:
    """Relabel P2 for maximum overlap with P1.

    The k x k overlap counts feed an optimal assignment; when the cluster
    counts differ the smaller side is padded with empty clusters.  Returns the
    relabeled assignment of P2 and the number of items whose relabeled
    cluster equals their P1 cluster.
    """
    a1, k1 = _labels_k(P1)
    a2, k2 = _labels_k(P2)
    if a1.shape[0] != a2.shape[0]:
        raise DataError("partitions cover different item counts")
    kk = max(k1, k2)
    overlap = np.zeros((kk, kk), dtype=np.int64)
    np.add.at(overlap, (a1, a2), 1)
    rows, cols = linear_sum_assignment(-overlap)
    mapping = np.empty(kk, dtype=int)
    mapping[cols] = rows
    relabeled = mapping[a2]
    return relabeled, int(overlap[rows, cols].sum())


# ---------------------------------------------------------------------------
# Monte Carlo significance of a single partition
# ---------------------------------------------------------------------------

def mecca(
    l: int,
    clusterer: Clusterer,
    D: DataMatrix,
    statistic: Callable[[DataMatrix, Partition], float],
    P_k: Partition,
    alpha_level: float = 0.05,
    null_model: NullModel = NullModel.POISSON_BOX,
    seed: int = 0,
) -> float:
    """Proportion of null-model statistic values larger than the observed one.

    ``alpha_level`` is carried for the caller's significance decision; the
    returned p-value does not depend on it.
    """
    if l < 1:
        raise DataError("the simulation needs at least one iteration")
    observed = statistic(D, P_k)
    exceed = 0
    for i in range(l):
        D_i = generate_null(D, null_model, child_seed(seed, "mecca", "null", i))
        P_i = clusterer.cluster(D_i, P_k.k, _cluster_seed(seed, "mecca", P_k.k, i, 0))
        if statistic(D_i, P_i) > observed:
            exceed += 1
    return exceed / l


# ---------------------------------------------------------------------------
# Bootstrap aggregation
# ---------------------------------------------------------------------------

def _bagclust1_finalize(D: DataMatrix, base: Partition, collected, k: int) -> Partition:
    """Majority vote over aligned bootstrap rounds; unsampled items keep base."""
    votes = np.zeros((D.n, k), dtype=np.int64)
    for rows, relabeled in collected:
        np.add.at(votes, (rows, relabeled), 1)
    never = votes.sum(axis=1) == 0
    assignment = np.argmax(votes, axis=1)
    assignment[never] = base.assignment[never]
    # the vote can concentrate on fewer than k labels; resurrect a dead label
    # from the base clustering so the partition keeps k clusters
    missing = np.setdiff1d(np.arange(k), np.unique(assignment))
    for label in missing:
        candidates = np.flatnonzero(base.assignment == label)
        pool = candidates if candidates.size else np.arange(D.n)
        counts = np.bincount(assignment, minlength=k)
        movable = pool[counts[assignment[pool]] > 1]
        take = movable[0] if movable.size else pool[0]
        assignment[take] = label
    return Partition(assignment, k)


def bagclust1(D: DataMatrix, clusterer: Clusterer, k: int, c: int, seed: int = 0) -> Partition:
    """Majority vote over bootstrap clusterings aligned to a base solution."""
    if c < 1:
        raise DataError("needs at least one bootstrap round")
    base = clusterer.cluster(D, k, _base_seed(seed, "bagclust1", k))
    collected = []
    for h in range(c):
        rows = _bootstrap_rows(D.n, _dgp_seed(seed, "bagclust1", k, h, 0))
        sample = D.take_rows(rows)
        P2 = clusterer.cluster(sample, k, _cluster_seed(seed, "bagclust1", k, h, 0))
        relabeled, _ = max_overlap_matching(base.assignment[rows], P2)
        collected.append((rows, relabeled))
    return _bagclust1_finalize(D, base, collected, k)


def _bagclust2_finalize(D: DataMatrix, collected, k: int) -> tuple[np.ndarray, Partition]:
    state = ConsensusState.empty(D.n)
    for kept, assignment in collected:
        state.accumulate(kept, assignment)
    with np.errstate(invalid="ignore"):
        dissimilarity = 1.0 - state.M / np.maximum(state.I, 1)
    undefined = state.I == 0
    np.fill_diagonal(undefined, False)
    if undefined.any():
        warnings.warn(
            f"{int(undefined.sum() // 2)} item pair(s) never co-sampled; dissimilarity set to 1",
            RuntimeWarning,
            stacklevel=3,
        )
    dissimilarity[undefined] = 1.0
    np.fill_diagonal(dissimilarity, 0.0)
    partition = cut_dendrogram(build_dendrogram(dissimilarity, Linkage.AVERAGE), k)
    return dissimilarity, partition


def bagclust2(
    D: DataMatrix, clusterer: Clusterer, k: int, c: int, beta: float = 0.8, seed: int = 0
) -> tuple[np.ndarray, Partition]:
    """Co-membership dissimilarity over subsample rounds, then clustered.

    Returns the dissimilarity matrix 1 - M/I (pairs never co-sampled get 1,
    with a warning) and the average-linkage partition cut from it at k.
    """
    if c < 1:
        raise DataError("needs at least one round")
    collected = []
    for h in range(c):
        kept = subsample_rows(D.n, beta, _dgp_seed(seed, "bagclust2", k, h, 0))
        labels = _cluster_kept(clusterer, D, None, kept, [k], _cluster_seed(seed, "bagclust2", k, h, 0))[k]
        collected.append((kept, labels))
    return _bagclust2_finalize(D, collected, k)


# ---------------------------------------------------------------------------
# Model Explorer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeResult:
    values: dict[int, np.ndarray]
    prediction: Prediction

    def histogram(self, k: int, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
        lo = min(0.0, float(min(v.min() for v in self.values.values())))
        return np.histogram(self.values[k], bins=bins, range=(lo, 1.0))


#: Automated ME reading: k* is the smallest k whose agreement values
#: concentrate above ME_VALUE_CUT while k+1's do not.
ME_VALUE_CUT = 0.9
ME_MASS_CUT = 0.8


def _me_round(D, clusterer, beta, index_fn, k, h, seed, tag="me"):
    for attempt in range(_MAX_REDRAWS):
        D1, kept1 = subsample(D, beta, _dgp_seed(seed, tag, k, h, 0, attempt))
        D2, kept2 = subsample(D, beta, _dgp_seed(seed, tag, k, h, 1, attempt))
        common, i1, i2 = np.intersect1d(kept1, kept2, return_indices=True)
        if common.size < 2:
            continue
        P1 = clusterer.cluster(D1, k, _cluster_seed(seed, tag, k, h, 0))
        P2 = clusterer.cluster(D2, k, _cluster_seed(seed, tag, k, h, 1))
        table = contingency(P1.assignment[i1], P2.assignment[i2])
        return float(index_fn(table))
    raise DataError(f"subsamples kept missing each other after {_MAX_REDRAWS} redraws")


def _me_prediction(values: dict[int, np.ndarray], ks: list[int]) -> Prediction:
    def concentrated(k: int) -> bool:
        return float(np.mean(values[k] > ME_VALUE_CUT)) >= ME_MASS_CUT

    k_star = NO_STRUCTURE
    for k in ks[:-1]:
        if concentrated(k) and not concentrated(k + 1):
            k_star = k
            break
    evidence = CurveSeries(
        np.array(ks),
        np.array([float(np.mean(values[k])) for k in ks]),
        np.array([float(np.std(values[k])) for k in ks]),
    )
    return Prediction(
        k_star,
        rule="me-concentration",
        evidence=evidence,
        details={"value_cut": ME_VALUE_CUT, "mass_cut": ME_MASS_CUT,
                 "low_confidence": k_star == NO_STRUCTURE},
    )


def me_run(D: DataMatrix, cfg: StabilityConfig, external_index: str | None = None) -> MeResult:
    """Agreement of clusterings of paired subsamples, per k.

    Per iteration two subsamples are clustered independently and compared by
    the external index restricted to their common rows (iterations whose
    subsamples share fewer than two rows are redrawn, boundedly).
    """
    index_fn = INDEX_FUNCTIONS[external_index or cfg.external_index]
    clusterer = cfg.clusterer
    ks = list(cfg.ks())
    values: dict[int, np.ndarray] = {}
    for k in ks:
        vals = [_me_round(D, clusterer, cfg.beta, index_fn, k, h, cfg.seed) for h in range(cfg.H)]
        values[k] = np.array(vals)
    return MeResult(values, _me_prediction(values, ks))


# ---------------------------------------------------------------------------
# Clest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClestResult:
    t: dict[int, float]
    t_null: dict[int, float]
    p: dict[int, float]
    d: dict[int, float]
    significant: tuple[int, ...]
    prediction: Prediction


def _clest_round(D, clusterer, index_fn, alpha, k, h, seed, tag):
    values = D.values
    n = values.shape[0]
    for attempt in range(_MAX_REDRAWS):
        train_rows, learn_rows = _split_rows(n, alpha, _split_seed(seed, tag, k, h, 0, attempt))
        if train_rows.size < k or learn_rows.size < k:
            raise DataError(
                f"cannot split {n} rows at alpha={alpha} and still cluster both halves at k={k}"
            )
        try:
            D_train = D.take_rows(train_rows)
            P_train = clusterer.cluster(D_train, k, _cluster_seed(seed, tag, k, h, 0))
            classifier = NearestCentroidClassifier.fit(D_train.values, P_train.assignment, k)
        except _RedrawRound:
            continue
        predicted = classifier.predict(values[learn_rows])
        P_learn = clusterer.cluster(D.take_rows(learn_rows), k, _cluster_seed(seed, tag, k, h, 1))
        return float(index_fn(contingency(predicted, P_learn.assignment)))
    raise DataError(f"classifier stayed degenerate after {_MAX_REDRAWS} redraws")


def _clest_tk(D, clusterer, index_fn, alpha, H, k, seed, tag) -> float:
    rounds = [_clest_round(D, clusterer, index_fn, alpha, k, h, seed, tag) for h in range(H)]
    return float(np.median(rounds))


def _clest_decision(ks, t, t_null, p, d, p_max, d_min):
    significant = tuple(k for k in ks if p[k] <= p_max and d[k] >= d_min)
    if significant:
        k_star = max(significant, key=lambda k: (d[k], -k))
    else:
        k_star = NO_STRUCTURE
    evidence = CurveSeries(np.array(ks), np.array([d[k] for k in ks]))
    prediction = Prediction(
        k_star,
        rule="clest-significance",
        evidence=evidence,
        details={"p_max": p_max, "d_min": d_min, "p": {str(k): p[k] for k in ks}},
    )
    return ClestResult(t, t_null, p, d, significant, prediction)


def clest_run(
    D: DataMatrix,
    cfg: StabilityConfig,
    external_index: str | None = None,
    B0: int = 20,
    p_max: float = CLEST_P_MAX,
    d_min: float = CLEST_D_MIN,
    null_model: NullModel = NullModel.POISSON_BOX,
) -> ClestResult:
    """Classifier-vs-clusterer agreement calibrated against a null model.

    Per k: H rounds split the data, the training share is clustered and fits
    the classifier, and the classifier's partition of the learning share is
    compared with the clusterer's by the external index; t_k is the median.
    B0 null datasets repeat the whole inner loop; p_k is the proportion of
    null medians at or above t_k and d_k the excess of t_k over their mean.
    k* is the significant k with the largest excess, or 1 when none is.
    """
    index_fn = INDEX_FUNCTIONS[external_index or cfg.external_index]
    clusterer = cfg.clusterer
    alpha = cfg.alpha if cfg.alpha > 0 else 1.0 - CLEST_LEARNING_FRACTION
    ks = list(cfg.ks())
    seed = cfg.seed

    t = {k: _clest_tk(D, clusterer, index_fn, alpha, cfg.H, k, seed, "clest") for k in ks}

    null_t: dict[int, list[float]] = {k: [] for k in ks}
    for b in range(B0):
        D_b = generate_null(D, null_model, child_seed(seed, "clest", "null", b))
        for k in ks:
            null_t[k].append(
                _clest_tk(D_b, clusterer, index_fn, alpha, cfg.H, k, seed, f"clest-null-{b}")
            )

    t_null = {k: float(np.mean(null_t[k])) for k in ks}
    p = {k: float(np.mean([v >= t[k] for v in null_t[k]])) for k in ks}
    d = {k: t[k] - t_null[k] for k in ks}
    return _clest_decision(ks, t, t_null, p, d, p_max, d_min)


# ---------------------------------------------------------------------------
# Levine-Domany
# ---------------------------------------------------------------------------

def _ld_round_fraction(base: Partition, P: Partition, kept: np.ndarray, k: int, h: int) -> float:
    base_conn = base.assignment[kept][:, None] == base.assignment[kept][None, :]
    round_conn = P.assignment[:, None] == P.assignment[None, :]
    iu = np.triu_indices(kept.size, 1)
    eligible = base_conn[iu]
    if not eligible.any():
        warnings.warn(
            f"round {h} at k={k} sampled no co-clustered pair; skipped",
            RuntimeWarning,
            stacklevel=3,
        )
        return math.nan
    return float(round_conn[iu][eligible].mean())


def _ld_prediction(ks: list[int], values: np.ndarray) -> tuple[CurveSeries, Prediction]:
    k_star = int(ks[int(np.argmax(values))])
    first_local = ks[-1]
    for i, k in enumerate(ks):
        left_ok = i == 0 or values[i] >= values[i - 1]
        right_ok = i == len(ks) - 1 or values[i] >= values[i + 1]
        if left_ok and right_ok:
            first_local = k
            break
    series = CurveSeries(np.array(ks), values)
    return series, Prediction(
        k_star, rule="ld-global-max", evidence=series,
        details={"first_local_max": int(first_local)},
    )


def levine_domany_run(D: DataMatrix, cfg: StabilityConfig) -> tuple[CurveSeries, Prediction]:
    """Average persistence of full-data co-memberships under subsampling.

    For each round, pairs co-clustered in the full-data solution and both
    sampled in the round are checked for co-membership in the round's
    clustering; per-round fractions are averaged over rounds.  k* is the
    global maximum (the first local maximum is reported alongside).
    """
    clusterer = cfg.clusterer
    ks = list(cfg.ks())
    seed = cfg.seed
    curve = []
    for k in ks:
        base = clusterer.cluster(D, k, _base_seed(seed, "ld", k))
        fractions = []
        for h in range(cfg.H):
            sample, kept = subsample(D, cfg.beta, _dgp_seed(seed, "ld", k, h, 0))
            P = clusterer.cluster(sample, k, _cluster_seed(seed, "ld", k, h, 0))
            fraction = _ld_round_fraction(base, P, kept, k, h)
            if not math.isnan(fraction):
                fractions.append(fraction)
        if not fractions:
            raise DataError(f"no usable rounds at k={k}")
        curve.append(float(np.mean(fractions)))
    return _ld_prediction(ks, np.array(curve))


# ---------------------------------------------------------------------------
# Roth et al.
# ---------------------------------------------------------------------------

def _roth_round(D, clusterer, alpha, k, h, seed, tag="roth"):
    values = D.values
    n = values.shape[0]
    for attempt in range(_MAX_REDRAWS):
        train_rows, learn_rows = _split_rows(n, alpha, _split_seed(seed, tag, k, h, 0, attempt))
        if train_rows.size < k or learn_rows.size < k:
            raise DataError(
                f"cannot split {n} rows at alpha={alpha} and still cluster both halves at k={k}"
            )
        try:
            D_train = D.take_rows(train_rows)
            P_train = clusterer.cluster(D_train, k, _cluster_seed(seed, tag, k, h, 0))
            classifier = NearestCentroidClassifier.fit(D_train.values, P_train.assignment, k)
        except _RedrawRound:
            continue
        predicted = classifier.predict(values[learn_rows])
        P_learn = clusterer.cluster(D.take_rows(learn_rows), k, _cluster_seed(seed, tag, k, h, 1))
        _, overlap = max_overlap_matching(predicted, P_learn.assignment)
        misclassified = 1.0 - overlap / learn_rows.size
        return misclassified / (1.0 - 1.0 / k)
    raise DataError(f"classifier stayed degenerate after {_MAX_REDRAWS} redraws")


def roth_run(D: DataMatrix, cfg: StabilityConfig) -> tuple[CurveSeries, Prediction]:
    """Expected instability of transferring clusterings across a split, per k.

    Misclassification is counted after optimal relabeling and normalized by
    1 - 1/k, the expectation of a uniformly random labeler; k* minimizes the
    mean over rounds.
    """
    clusterer = cfg.clusterer
    alpha = cfg.alpha if cfg.alpha > 0 else 0.5
    ks = list(cfg.ks())
    values = []
    for k in ks:
        rounds = [_roth_round(D, clusterer, alpha, k, h, cfg.seed) for h in range(cfg.H)]
        values.append(float(np.mean(rounds)))
    series = CurveSeries(np.array(ks), np.array(values))
    k_star = int(ks[int(np.argmin(values))])
    return series, Prediction(k_star, rule="roth-min-instability", evidence=series)


# ---------------------------------------------------------------------------
# Consensus and FC
# ---------------------------------------------------------------------------

@dataclass
class ConsensusState:
    """Connectivity and co-sampling accumulators of one cluster count.

    ``M[i, j]`` counts rounds in which items i and j landed in the same
    cluster, ``I[i, j]`` rounds in which both were sampled.  States merge by
    elementwise addition, so concurrent rounds can reduce in any order.
    """

    M: np.ndarray
    I: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "ConsensusState":
        return cls(np.zeros((n, n), dtype=np.int64), np.zeros((n, n), dtype=np.int64))

    def accumulate(self, kept: np.ndarray, assignment: np.ndarray) -> None:
        conn = assignment[:, None] == assignment[None, :]
        ix = np.ix_(kept, kept)
        self.M[ix] += conn
        self.I[ix] += 1

    def merge(self, other: "ConsensusState") -> "ConsensusState":
        return ConsensusState(self.M + other.M, self.I + other.I)

    def consensus_matrix(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.I > 0, self.M / np.maximum(self.I, 1), np.nan)

    def check(self) -> None:
        if (self.M > self.I).any():
            raise DataError("connectivity counts exceed co-sampling counts")
        if not np.array_equal(self.M, self.M.T) or not np.array_equal(self.I, self.I.T):
            raise DataError("consensus accumulators must be symmetric")


@dataclass(frozen=True)
class ConsensusResult:
    consensus: dict[int, np.ndarray]
    states: dict[int, ConsensusState]
    area: CurveSeries
    delta: CurveSeries
    delta_prime: CurveSeries
    prediction: Prediction


def consensus_cdf_area(entries: np.ndarray) -> float:
    """Area under the empirical CDF of consensus entries over [0, 1].

    For a step CDF the exact area is 1 minus the mean entry; on a two-valued
    {0,1} matrix that is the fraction of never-co-clustered pairs.
    """
    return 1.0 - float(np.mean(entries))


def consensus_cdf(entries: np.ndarray, grid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF of consensus entries, for reporting."""
    if grid is None:
        grid = np.linspace(0.0, 1.0, 101)
    sorted_entries = np.sort(entries)
    cdf = np.searchsorted(sorted_entries, grid, side="right") / max(1, sorted_entries.size)
    return grid, cdf


def _delta_curves(ks: list[int], areas: np.ndarray) -> tuple[CurveSeries, CurveSeries]:
    """Relative area change into each k; the first point anchors at A(k_min).

    The change is indexed at its right endpoint, so the jump of the area into
    the true cluster count shows up at that count.
    """

    def deltas(a: np.ndarray) -> np.ndarray:
        out = np.empty(len(ks))
        out[0] = a[0]
        for i in range(1, len(ks)):
            out[i] = (a[i] - a[i - 1]) / a[i - 1] if a[i - 1] != 0 else 0.0
        return out

    delta = deltas(areas)
    delta_prime = deltas(np.maximum.accumulate(areas))
    grid = np.array(ks)
    return CurveSeries(grid, delta), CurveSeries(grid, delta_prime)


def _stabilization_prediction(delta: CurveSeries, area: CurveSeries, tau: float) -> Prediction:
    """Smallest non-negative point whose remaining tail stays within tau."""
    ks = delta.k_values
    vals = delta.values
    for i, k in enumerate(ks):
        if vals[i] >= 0 and np.all(np.abs(vals[i + 1:]) <= tau):
            return Prediction(
                int(k),
                rule="consensus-stabilization",
                evidence=delta,
                details={"tau": tau, "area": area.values.tolist()},
            )
    return Prediction(
        int(ks[-1]),
        rule="consensus-stabilization",
        evidence=delta,
        details={"tau": tau, "area": area.values.tolist(), "low_confidence": True},
    )


def _check_k_range(D: DataMatrix, k_range) -> list[int]:
    ks = sorted(int(k) for k in k_range)
    if len(ks) < 3:
        raise DataError("consensus needs at least 3 consecutive k values")
    if ks[0] < 2 or ks[-1] > D.n:
        raise DataError(f"k range must lie within [2, {D.n}]")
    if any(b - a != 1 for a, b in zip(ks, ks[1:])):
        raise DataError("consensus k range must be consecutive")
    return ks


def _cluster_kept(clusterer, D, full_distances, kept, ks, seed) -> dict[int, np.ndarray]:
    """Cluster labels of the subsample given by ``kept`` at each requested k.

    Labels need not be canonical (co-membership is label-invariant).
    Hierarchical clusterers reuse a precomputed full distance matrix: the
    sliced submatrix is bitwise equal to recomputing distances on the sample,
    and one merge replay serves every requested k.
    """
    if isinstance(clusterer, HierClusterer):
        if full_distances is None:
            full_distances = euclidean_distances(D)
        sub = full_distances[np.ix_(kept, kept)]
        dend = build_dendrogram(sub, clusterer.linkage, check=False)
        return cut_labels_many(dend, ks)
    sample = D.take_rows(kept)
    return {k: P.assignment for k, P in clusterer.cluster_range(sample, ks, seed).items()}


def _finish_consensus(D: DataMatrix, ks: list[int], states: dict[int, ConsensusState], tau: float) -> ConsensusResult:
    iu = np.triu_indices(D.n, 1)
    consensus = {}
    areas = []
    for k in ks:
        cons = states[k].consensus_matrix()
        consensus[k] = cons
        entries = cons[iu]
        defined = ~np.isnan(entries)
        if not defined.all():
            warnings.warn(
                f"{int((~defined).sum())} pair(s) never co-sampled at k={k}; excluded from the CDF",
                RuntimeWarning,
                stacklevel=3,
            )
        areas.append(consensus_cdf_area(entries[defined]))
    area_curve = CurveSeries(np.array(ks), np.array(areas))
    delta, delta_prime = _delta_curves(ks, np.array(areas))
    prediction = _stabilization_prediction(delta, area_curve, tau)
    return ConsensusResult(consensus, states, area_curve, delta, delta_prime, prediction)


def consensus_run(
    D: DataMatrix,
    clusterer: Clusterer,
    H: int = 250,
    p: float = 0.8,
    k_range=range(2, 11),
    seed: int = 0,
    tau: float = CONSENSUS_STABILITY_TAU,
    _share_round_samples: bool = False,
) -> ConsensusResult:
    """Consensus clustering with an independent subsample per (k, round).

    ``_share_round_samples`` forces round h to reuse one sample across all k
    (the draw FC makes); it exists so the loop-switch equivalence can be
    demonstrated and is not part of the published procedure.
    """
    ks = _check_k_range(D, k_range)
    hier = isinstance(clusterer, HierClusterer)
    full_distances = euclidean_distances(D) if hier else None
    states = {k: ConsensusState.empty(D.n) for k in ks}
    for k in ks:
        for h in range(H):
            if _share_round_samples:
                sample_seed = _outer_dgp_seed(seed, "consensus", h, 0)
            else:
                sample_seed = _dgp_seed(seed, "consensus", k, h, 0)
            kept = subsample_rows(D.n, p, sample_seed)
            cl_seed = 0 if hier else _cluster_seed(seed, "consensus", k, h, 0)
            labels = _cluster_kept(clusterer, D, full_distances, kept, [k], cl_seed)[k]
            states[k].accumulate(kept, labels)
    return _finish_consensus(D, ks, states, tau)


def fc_run(
    D: DataMatrix,
    clusterer: Clusterer,
    H: int = 250,
    p: float = 0.8,
    k_range=range(2, 11),
    seed: int = 0,
    tau: float = CONSENSUS_STABILITY_TAU,
) -> ConsensusResult:
    """Loop-switched consensus: one subsample per round, clustered at every k.

    With a hierarchical clusterer a single dendrogram per round serves all k,
    which is where the speedup over the per-(k, round) procedure comes from;
    the downstream consensus pipeline is identical.
    """
    ks = _check_k_range(D, k_range)
    hier = isinstance(clusterer, HierClusterer)
    full_distances = euclidean_distances(D) if hier else None
    n = D.n
    M = {k: np.zeros((n, n), dtype=np.int64) for k in ks}
    I = np.zeros((n, n), dtype=np.int64)  # sampling does not depend on k here
    for h in range(H):
        kept = subsample_rows(n, p, _outer_dgp_seed(seed, "consensus", h, 0))
        cl_seed = 0 if hier else child_seed(seed, "consensus", "cl-outer", h)
        labels = _cluster_kept(clusterer, D, full_distances, kept, ks, cl_seed)
        ix = np.ix_(kept, kept)
        I[ix] += 1
        for k in ks:
            M[k][ix] += labels[k][:, None] == labels[k][None, :]
    states = {k: ConsensusState(M[k], I if k == ks[-1] else I.copy()) for k in ks}
    return _finish_consensus(D, ks, states, tau)


def consensus_to_distance(result: ConsensusResult, k: int) -> np.ndarray:
    """Pseudo-distance 1 - consensus; undefined entries become 1 (warned)."""
    if k not in result.consensus:
        raise DataError(f"no consensus matrix at k={k}")
    cons = result.consensus[k]
    undefined = np.isnan(cons)
    np.fill_diagonal(undefined, False)
    if undefined.any():
        warnings.warn(
            f"{int(undefined.sum() // 2)} undefined consensus pair(s) mapped to distance 1",
            RuntimeWarning,
            stacklevel=2,
        )
    distances = 1.0 - np.where(np.isnan(cons), 0.0, cons)
    distances[undefined] = 1.0
    np.fill_diagonal(distances, 0.0)
    return np.clip(distances, 0.0, None)


# ---------------------------------------------------------------------------
# The generic paradigm engine
# ---------------------------------------------------------------------------

@dataclass
class RoundCtx:
    """Everything one resampling iteration prepared for the instance hooks."""

    D: DataMatrix
    cfg: StabilityConfig
    k: int
    h: int
    attempt: int
    datasets: list[DataMatrix]
    kept: list[np.ndarray | None]
    train_rows: list[np.ndarray]
    learn_rows: list[np.ndarray]
    state: object = None

    def training(self, i: int) -> DataMatrix:
        return self.datasets[i].take_rows(self.train_rows[i])

    def learning(self, i: int) -> DataMatrix:
        rows = self.learn_rows[i]
        ds = self.datasets[i]
        return ds if rows.size == ds.n else ds.take_rows(rows)


@dataclass(frozen=True)
class Wiring:
    """One instance of the stability paradigm.

    ``dgps`` generate the per-iteration datasets (step 1 of the scheme); the
    engine owns the iteration, redraw and split mechanics (step 2); ``round``
    performs the instance's train/cluster/collect steps (3-7) on a prepared
    ``RoundCtx``; ``setup`` precomputes shared per-k state and ``finalize``
    turns the collected statistics into the instance's statistic set.
    """

    tag: str
    dgps: tuple[Callable, ...]
    round: Callable
    setup: Callable | None = None
    finalize: Callable | None = None


def run_stability_statistic(D: DataMatrix, cfg: StabilityConfig, k: int, collector: Wiring):
    """Collect the per-iteration statistic set S^k for one cluster count.

    ``collector`` wires the paradigm's abstract steps to a concrete instance;
    iterations that raise a redraw request are repeated with fresh draws, a
    bounded number of times.
    """
    state = collector.setup(D, cfg, k) if collector.setup else None
    S = []
    for h in range(cfg.H):
        S.append(_stability_round(D, cfg, k, h, collector, state))
    if collector.finalize is not None:
        return collector.finalize(D, cfg, k, S, state)
    return S


def _stability_round(D, cfg, k, h, wiring, state):
    for attempt in range(_MAX_REDRAWS):
        datasets: list[DataMatrix] = [D]
        kept: list[np.ndarray | None] = [None]
        for j, gen in enumerate(wiring.dgps):
            matrix, kept_rows = gen(D, cfg, k, h, j, attempt)
            datasets.append(matrix)
            kept.append(kept_rows)
        train_rows, learn_rows = [], []
        for i, ds in enumerate(datasets):
            tr, lr = _split_rows(ds.n, cfg.alpha, _split_seed(cfg.seed, wiring.tag, k, h, i, attempt))
            train_rows.append(tr)
            learn_rows.append(lr)
        ctx = RoundCtx(D, cfg, k, h, attempt, datasets, kept, train_rows, learn_rows, state)
        try:
            return wiring.round(ctx)
        except _RedrawRound:
            continue
    raise DataError(f"round still degenerate after {_MAX_REDRAWS} redraws")


def _subsample_dgp(tag: str, beta_of: Callable[[StabilityConfig], float]):
    def gen(D, cfg, k, h, j, attempt):
        return subsample(D, beta_of(cfg), _dgp_seed(cfg.seed, tag, k, h, j, attempt))

    return gen


# -- wirings -----------------------------------------------------------------

def me_wiring(index_fn) -> Wiring:
    def round(ctx):
        kept1, kept2 = ctx.kept[1], ctx.kept[2]
        common, i1, i2 = np.intersect1d(kept1, kept2, return_indices=True)
        if common.size < 2:
            raise _RedrawRound("subsamples share fewer than two rows")
        cl = ctx.cfg.clusterer
        P1 = cl.cluster(ctx.datasets[1], ctx.k, _cluster_seed(ctx.cfg.seed, "me", ctx.k, ctx.h, 0))
        P2 = cl.cluster(ctx.datasets[2], ctx.k, _cluster_seed(ctx.cfg.seed, "me", ctx.k, ctx.h, 1))
        return float(index_fn(contingency(P1.assignment[i1], P2.assignment[i2])))

    gen = _subsample_dgp("me", lambda cfg: cfg.beta)
    return Wiring("me", (gen, gen), round)


def paradigm_me_run(D: DataMatrix, cfg: StabilityConfig, external_index: str | None = None) -> MeResult:
    index_fn = INDEX_FUNCTIONS[external_index or cfg.external_index]
    ks = list(cfg.ks())
    wiring = me_wiring(index_fn)
    values = {k: np.array(run_stability_statistic(D, cfg, k, wiring)) for k in ks}
    return MeResult(values, _me_prediction(values, ks))


def _classifier_vs_clusterer_wiring(tag: str, score) -> Wiring:
    """Shared split/train/cluster skeleton of the replicating-analysis family."""

    def round(ctx):
        cfg, k, h = ctx.cfg, ctx.k, ctx.h
        if ctx.train_rows[0].size < k or ctx.learn_rows[0].size < k:
            raise DataError(
                f"cannot split {ctx.D.n} rows at alpha={cfg.alpha} and still cluster both halves at k={k}"
            )
        D_train = ctx.training(0)
        P_train = cfg.clusterer.cluster(D_train, k, _cluster_seed(cfg.seed, tag, k, h, 0))
        classifier = NearestCentroidClassifier.fit(D_train.values, P_train.assignment, k)
        learn_values = ctx.D.values[ctx.learn_rows[0]]
        predicted = classifier.predict(learn_values)
        P_learn = cfg.clusterer.cluster(ctx.learning(0), k, _cluster_seed(cfg.seed, tag, k, h, 1))
        return score(predicted, P_learn, ctx.learn_rows[0].size, k)

    return Wiring(tag, (), round)


def paradigm_clest_run(
    D: DataMatrix,
    cfg: StabilityConfig,
    external_index: str | None = None,
    B0: int = 20,
    p_max: float = CLEST_P_MAX,
    d_min: float = CLEST_D_MIN,
    null_model: NullModel = NullModel.POISSON_BOX,
) -> ClestResult:
    index_fn = INDEX_FUNCTIONS[external_index or cfg.external_index]
    alpha = cfg.alpha if cfg.alpha > 0 else 1.0 - CLEST_LEARNING_FRACTION
    cfg = StabilityConfig(cfg.k_min, cfg.k_max, cfg.H, cfg.beta, alpha, cfg.dgp,
                          cfg.clusterers, cfg.external_index, cfg.seed)
    ks = list(cfg.ks())

    def score(predicted, P_learn, n_learn, k):
        return float(index_fn(contingency(predicted, P_learn.assignment)))

    t = {
        k: float(np.median(run_stability_statistic(D, cfg, k, _classifier_vs_clusterer_wiring("clest", score))))
        for k in ks
    }
    null_t: dict[int, list[float]] = {k: [] for k in ks}
    for b in range(B0):
        D_b = generate_null(D, null_model, child_seed(cfg.seed, "clest", "null", b))
        wiring = _classifier_vs_clusterer_wiring(f"clest-null-{b}", score)
        for k in ks:
            null_t[k].append(float(np.median(run_stability_statistic(D_b, cfg, k, wiring))))
    t_null = {k: float(np.mean(null_t[k])) for k in ks}
    p = {k: float(np.mean([v >= t[k] for v in null_t[k]])) for k in ks}
    d = {k: t[k] - t_null[k] for k in ks}
    return _clest_decision(ks, t, t_null, p, d, p_max, d_min)


def paradigm_roth_run(D: DataMatrix, cfg: StabilityConfig) -> tuple[CurveSeries, Prediction]:
    alpha = cfg.alpha if cfg.alpha > 0 else 0.5
    cfg = StabilityConfig(cfg.k_min, cfg.k_max, cfg.H, cfg.beta, alpha, cfg.dgp,
                          cfg.clusterers, cfg.external_index, cfg.seed)
    ks = list(cfg.ks())

    def score(predicted, P_learn, n_learn, k):
        _, overlap = max_overlap_matching(predicted, P_learn.assignment)
        return (1.0 - overlap / n_learn) / (1.0 - 1.0 / k)

    wiring = _classifier_vs_clusterer_wiring("roth", score)
    values = [float(np.mean(run_stability_statistic(D, cfg, k, wiring))) for k in ks]
    series = CurveSeries(np.array(ks), np.array(values))
    k_star = int(ks[int(np.argmin(values))])
    return series, Prediction(k_star, rule="roth-min-instability", evidence=series)


def ld_wiring() -> Wiring:
    def setup(D, cfg, k):
        return cfg.clusterer.cluster(D, k, _base_seed(cfg.seed, "ld", k))

    def round(ctx):
        base = ctx.state
        P = ctx.cfg.clusterer.cluster(
            ctx.datasets[1], ctx.k, _cluster_seed(ctx.cfg.seed, "ld", ctx.k, ctx.h, 0)
        )
        return _ld_round_fraction(base, P, ctx.kept[1], ctx.k, ctx.h)

    return Wiring("ld", (_subsample_dgp("ld", lambda cfg: cfg.beta),), round, setup=setup)


def paradigm_levine_domany_run(D: DataMatrix, cfg: StabilityConfig) -> tuple[CurveSeries, Prediction]:
    ks = list(cfg.ks())
    wiring = ld_wiring()
    curve = []
    for k in ks:
        S = run_stability_statistic(D, cfg, k, wiring)
        fractions = [v for v in S if not math.isnan(v)]
        if not fractions:
            raise DataError(f"no usable rounds at k={k}")
        curve.append(float(np.mean(fractions)))
    return _ld_prediction(ks, np.array(curve))


def consensus_wiring(p: float) -> Wiring:
    def gen(D, cfg, k, h, j, attempt):
        return subsample(D, p, _dgp_seed(cfg.seed, "consensus", k, h, j, attempt))

    def round(ctx):
        labels = _cluster_kept(
            ctx.cfg.clusterer, ctx.D, None, ctx.kept[1], [ctx.k],
            _cluster_seed(ctx.cfg.seed, "consensus", ctx.k, ctx.h, 0),
        )[ctx.k]
        return ctx.kept[1], labels

    def finalize(D, cfg, k, S, state):
        acc = ConsensusState.empty(D.n)
        for kept, assignment in S:
            acc.accumulate(kept, assignment)
        return acc

    return Wiring("consensus", (gen,), round, finalize=finalize)


def paradigm_consensus_run(
    D: DataMatrix,
    clusterer: Clusterer,
    H: int = 250,
    p: float = 0.8,
    k_range=range(2, 11),
    seed: int = 0,
    tau: float = CONSENSUS_STABILITY_TAU,
) -> ConsensusResult:
    ks = _check_k_range(D, k_range)
    cfg = StabilityConfig(k_min=ks[0], k_max=ks[-1], H=H, beta=p, alpha=0.0,
                          clusterers=(clusterer,), seed=seed)
    wiring = consensus_wiring(p)
    states = {k: run_stability_statistic(D, cfg, k, wiring) for k in ks}
    return _finish_consensus(D, ks, states, tau)


def bagclust1_wiring() -> Wiring:
    def gen(D, cfg, k, h, j, attempt):
        rows = _bootstrap_rows(D.n, _dgp_seed(cfg.seed, "bagclust1", k, h, j, attempt))
        return D.take_rows(rows), rows

    def setup(D, cfg, k):
        return cfg.clusterer.cluster(D, k, _base_seed(cfg.seed, "bagclust1", k))

    def round(ctx):
        base = ctx.state
        rows = ctx.kept[1]
        P2 = ctx.cfg.clusterer.cluster(
            ctx.datasets[1], ctx.k, _cluster_seed(ctx.cfg.seed, "bagclust1", ctx.k, ctx.h, 0)
        )
        relabeled, _ = max_overlap_matching(base.assignment[rows], P2)
        return rows, relabeled

    def finalize(D, cfg, k, S, state):
        return _bagclust1_finalize(D, state, S, k)

    return Wiring("bagclust1", (gen,), round, setup=setup, finalize=finalize)


def paradigm_bagclust1(D: DataMatrix, clusterer: Clusterer, k: int, c: int, seed: int = 0) -> Partition:
    cfg = StabilityConfig(k_min=2, k_max=max(2, k), H=c, clusterers=(clusterer,), seed=seed)
    return run_stability_statistic(D, cfg, k, bagclust1_wiring())


def bagclust2_wiring(beta: float) -> Wiring:
    def gen(D, cfg, k, h, j, attempt):
        return subsample(D, beta, _dgp_seed(cfg.seed, "bagclust2", k, h, j, attempt))

    def round(ctx):
        labels = _cluster_kept(
            ctx.cfg.clusterer, ctx.D, None, ctx.kept[1], [ctx.k],
            _cluster_seed(ctx.cfg.seed, "bagclust2", ctx.k, ctx.h, 0),
        )[ctx.k]
        return ctx.kept[1], labels

    def finalize(D, cfg, k, S, state):
        return _bagclust2_finalize(D, S, k)

    return Wiring("bagclust2", (gen,), round, finalize=finalize)


def paradigm_bagclust2(
    D: DataMatrix, clusterer: Clusterer, k: int, c: int, beta: float = 0.8, seed: int = 0
) -> tuple[np.ndarray, Partition]:
    cfg = StabilityConfig(k_min=2, k_max=max(2, k), H=c, beta=beta, clusterers=(clusterer,), seed=seed)
    return run_stability_statistic(D, cfg, k, bagclust2_wiring(beta))


def gap_wiring(step: int) -> Wiring:
    """Gap's statistic collection: one iteration, the WCSS of the observed data."""

    def round(ctx):
        parts = ctx.cfg.clusterer.cluster_range(
            ctx.D, [ctx.k], derive_rng(ctx.cfg.seed, "gap-obs", step).integers(2**32)
        )
        return _safe_log_wcss(ctx.D, parts[ctx.k])

    return Wiring("gap", (), round)


def paradigm_gap_predict(
    D: DataMatrix,
    clusterer: Clusterer,
    null_model: NullModel = NullModel.POISSON_BOX,
    l: int = 10,
    steps: int = 20,
    k_max: int = 10,
    seed: int = 0,
) -> Prediction:
    """The gap statistic expressed through the paradigm.

    The statistic loop collects log WCSS of the observed data (one iteration,
    no perturbation); the significance analysis generates the null datasets,
    repeats the collection on them, and applies the first-crossing rule.  One
    whole measure run per Monte Carlo step; majority vote across steps.
    """
    if l < 2:
        raise DataError(f"needs at least 2 null matrices per step, got {l}")
    if steps < 1 or k_max < 2:
        raise DataError("needs steps >= 1 and k_max >= 2")
    ks = np.arange(1, k_max + 1)
    cfg = StabilityConfig(k_min=2, k_max=max(2, k_max), H=1, clusterers=(clusterer,), seed=seed)
    step_predictions = []
    for step in range(steps):
        wiring = gap_wiring(step)
        log_obs = np.array([run_stability_statistic(D, cfg, int(k), wiring)[0] for k in ks])
        log_null = np.empty((l, k_max))
        for i in range(l):
            D_i = generate_null(D, null_model, int(derive_rng(seed, "gap-null", step, i).integers(2**32)))
            parts = clusterer.cluster_range(D_i, ks, derive_rng(seed, "gap-null-cl", step, i).integers(2**32))
            log_null[i] = [_safe_log_wcss(D_i, parts[k]) for k in ks]
        gap, s, valid = _gap_step_statistics(log_obs, log_null, l, ks)
        step_predictions.append(_gap_first_crossing(ks, gap, s, valid))
    k_star, counts = _gap_majority(step_predictions)
    return Prediction(
        k_star,
        rule="gap-first-crossing-majority",
        details={"step_predictions": step_predictions, "counts": dict(sorted(counts.items()))},
    )
