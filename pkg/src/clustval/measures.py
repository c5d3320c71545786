"""Data-driven internal measures and their fast approximations.

Covers the compactness curve (WCSS) and its automated readers (knee rule,
ratio-of-differences rule), the leave-one-condition-out predictive error
(FOM), the null-model gap statistic, the merge-descent approximations of the
WCSS and FOM curves (refresh step R), and the geometric chord heuristics that
replace the gap simulation phase.
"""

from __future__ import annotations

import math
import warnings
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_rng
from .cluster import (
    Dendrogram,
    KMeansInit,
    Linkage,
    build_dendrogram,
    cut_dendrogram,
    cut_dendrogram_many,
    euclidean_distances,
    kmeans,
    merge_min_centroid,
)
from .data import DataMatrix, Partition
from .datagen import NullModel, generate_null
from .errors import DataError

__all__ = [
    "CurveSeries",
    "Prediction",
    "Clusterer",
    "HierClusterer",
    "KMeansClusterer",
    "NmfClusterer",
    "RefreshClusterer",
    "clusterer_from_name",
    "wcss",
    "wcss_curve",
    "wcss_r_curve",
    "kl_predict",
    "fom_value",
    "fom_curve",
    "fom_r_curve",
    "knee_detect",
    "gap_predict",
    "g_gap_predict",
    "g_fom_predict",
    "diff_fom_predict",
]


@dataclass(frozen=True)
class CurveSeries:
    """Values of a measure over an increasing grid of cluster counts."""

    k_values: np.ndarray
    values: np.ndarray
    dispersion: np.ndarray | None = None

    def __post_init__(self):
        ks = np.asarray(self.k_values, dtype=int)
        vs = np.asarray(self.values, dtype=float)
        if ks.ndim != 1 or vs.shape != ks.shape:
            raise DataError("curve k-values and values must be matching 1-d sequences")
        if ks.size >= 2 and not np.all(np.diff(ks) > 0):
            raise DataError("curve k-values must be strictly increasing")
        disp = self.dispersion
        if disp is not None:
            disp = np.asarray(disp, dtype=float)
            if disp.shape != ks.shape:
                raise DataError("dispersion length must match the curve")
            disp = disp.copy()
            disp.flags.writeable = False
        ks, vs = ks.copy(), vs.copy()
        ks.flags.writeable = False
        vs.flags.writeable = False
        object.__setattr__(self, "k_values", ks)
        object.__setattr__(self, "values", vs)
        object.__setattr__(self, "dispersion", disp)

    def value_at(self, k: int) -> float:
        idx = np.flatnonzero(self.k_values == k)
        if idx.size != 1:
            raise DataError(f"curve has no point at k={k}")
        return float(self.values[idx[0]])

    def __len__(self) -> int:
        return int(self.k_values.size)


#: Prediction of "no structure in the data".
NO_STRUCTURE = 1


@dataclass(frozen=True)
class Prediction:
    """A cluster-number estimate together with the rule and its evidence."""

    k_star: int
    rule: str
    evidence: CurveSeries | None = None
    details: dict = field(default_factory=dict)

    @property
    def low_confidence(self) -> bool:
        return bool(self.details.get("low_confidence", False))


# ---------------------------------------------------------------------------
# Clustering algorithm dispatch
# ---------------------------------------------------------------------------

def trivial_partition(n: int) -> Partition:
    return Partition(np.zeros(n, dtype=int), 1)


class Clusterer(ABC):
    """A clustering algorithm applied at a requested number of clusters."""

    name: str = "clusterer"

    @abstractmethod
    def cluster(self, D: DataMatrix, k: int, seed: int) -> Partition:
        ...

    def cluster_range(self, D: DataMatrix, ks, seed: int) -> dict[int, Partition]:
        """Partitions for every requested k; override when work can be shared."""
        return {int(k): self.cluster(D, int(k), seed) for k in ks}


_LINKAGES = {"a": Linkage.AVERAGE, "c": Linkage.COMPLETE, "s": Linkage.SINGLE}


@dataclass(frozen=True)
class HierClusterer(Clusterer):
    linkage: Linkage = Linkage.AVERAGE

    @property
    def name(self) -> str:
        return f"hier-{self.linkage.value[0]}"

    def dendrogram(self, D: DataMatrix) -> Dendrogram:
        return build_dendrogram(euclidean_distances(D), self.linkage)

    def cluster(self, D: DataMatrix, k: int, seed: int = 0) -> Partition:
        return cut_dendrogram(self.dendrogram(D), k)

    def cluster_range(self, D: DataMatrix, ks, seed: int = 0) -> dict[int, Partition]:
        return cut_dendrogram_many(self.dendrogram(D), ks)


@dataclass(frozen=True)
class KMeansClusterer(Clusterer):
    """K-means with random centroids or a hierarchical warm start."""

    init: str = "random"  # random | hier-a | hier-c | hier-s
    niter: int = 100

    def __post_init__(self):
        if self.init != "random" and self.init.removeprefix("hier-") not in _LINKAGES:
            raise DataError(f"unknown k-means initialization {self.init!r}")

    @property
    def name(self) -> str:
        suffix = "r" if self.init == "random" else self.init.removeprefix("hier-")
        return f"kmeans-{suffix}"

    def _init_for(self, D: DataMatrix, k: int, dend: Dendrogram | None) -> KMeansInit:
        if self.init == "random":
            return KMeansInit.random()
        if dend is None:
            linkage = _LINKAGES[self.init.removeprefix("hier-")]
            dend = build_dendrogram(euclidean_distances(D), linkage)
        return KMeansInit.from_partition(cut_dendrogram(dend, k))

    def cluster(self, D: DataMatrix, k: int, seed: int) -> Partition:
        if k == 1:
            return trivial_partition(D.n)
        return kmeans(D, k, self._init_for(D, k, None), self.niter, seed)

    def cluster_range(self, D: DataMatrix, ks, seed: int) -> dict[int, Partition]:
        dend = None
        if self.init != "random":
            linkage = _LINKAGES[self.init.removeprefix("hier-")]
            dend = build_dendrogram(euclidean_distances(D), linkage)
        out = {}
        for k in ks:
            k = int(k)
            if k == 1:
                out[k] = trivial_partition(D.n)
            else:
                out[k] = kmeans(D, k, self._init_for(D, k, dend), self.niter, seed)
        return out


@dataclass(frozen=True)
class NmfClusterer(Clusterer):
    """Clustering by metagene argmax; see the factorization module."""

    variant: object = None  # NmfVariant; default multiplicative
    stop: object = None  # StopRule
    init: str = "random"  # random | hier-a | hier-c | hier-s
    shift_negative: bool = False

    @property
    def name(self) -> str:
        suffix = "r" if self.init == "random" else self.init.removeprefix("hier-")
        return f"nmf-{suffix}"

    def cluster(self, D: DataMatrix, k: int, seed: int) -> Partition:
        if k == 1:
            return trivial_partition(D.n)
        from . import nmf as _nmf

        variant = self.variant or _nmf.NmfVariant.multiplicative()
        stop = self.stop or _nmf.StopRule()
        init = None
        if self.init != "random":
            linkage = _LINKAGES[self.init.removeprefix("hier-")]
            warm = cut_dendrogram(build_dendrogram(euclidean_distances(D), linkage), k)
            init = warm
        return _nmf.nmf_cluster(
            D, k, variant=variant, stop=stop, init_partition=init, seed=seed,
            shift_negative=self.shift_negative,
        )


@dataclass(frozen=True)
class RefreshClusterer(Clusterer):
    """Merge-descent partitions with a K-means refresh every R levels."""

    refresh: int = 0
    niter: int = 100

    @property
    def name(self) -> str:
        return f"refresh-r{self.refresh}"

    def cluster(self, D: DataMatrix, k: int, seed: int) -> Partition:
        return self.cluster_range(D, [k], seed)[k]

    def cluster_range(self, D: DataMatrix, ks, seed: int) -> dict[int, Partition]:
        ks = sorted(int(k) for k in ks)
        path = refresh_descent(D, self.refresh, ks[-1], self.niter, seed)
        return {k: path[k] for k in ks}


def clusterer_from_name(name: str, niter: int = 100, refresh: int = 0) -> Clusterer:
    """CLI-facing construction: hier-a/c/s, kmeans-r/a/c/s, nmf-r/a/c/s, refresh."""
    name = name.lower()
    if name.startswith("hier-") and name[-1] in _LINKAGES:
        return HierClusterer(_LINKAGES[name[-1]])
    if name.startswith("kmeans-"):
        suffix = name.removeprefix("kmeans-")
        init = "random" if suffix == "r" else f"hier-{suffix}"
        return KMeansClusterer(init=init, niter=niter)
    if name.startswith("nmf-"):
        suffix = name.removeprefix("nmf-")
        init = "random" if suffix == "r" else f"hier-{suffix}"
        return NmfClusterer(init=init)
    if name == "refresh":
        return RefreshClusterer(refresh=refresh, niter=niter)
    raise DataError(
        f"unknown clusterer {name!r}; valid: hier-a|hier-c|hier-s|kmeans-r|kmeans-a|"
        f"kmeans-c|kmeans-s|nmf-r|nmf-a|nmf-c|nmf-s|refresh"
    )


# ---------------------------------------------------------------------------
# Within-cluster sum of squares
# ---------------------------------------------------------------------------

def wcss(D: DataMatrix, P: Partition) -> float:
    """Sum over clusters of squared Euclidean distances to the centroid."""
    X = D.values
    total = 0.0
    for c in range(P.k):
        rows = X[P.assignment == c]
        centroid = rows.mean(axis=0)
        total += float(((rows - centroid) ** 2).sum())
    return total


def wcss_curve(D: DataMatrix, clusterer: Clusterer, k_max: int, seed: int = 0) -> CurveSeries:
    """WCSS at every k in [1, k_max] from fresh clusterer runs."""
    if not 1 <= k_max <= D.n:
        raise DataError(f"k_max must be in [1, {D.n}], got {k_max}")
    ks = list(range(1, k_max + 1))
    partitions = clusterer.cluster_range(D, ks, seed)
    return CurveSeries(np.array(ks), np.array([wcss(D, partitions[k]) for k in ks]))


def refresh_descent(D: DataMatrix, R: int, k_max: int, niter: int, seed: int) -> dict[int, Partition]:
    """Partitions along the merge path from k_max down to 1.

    Starts from a K-means solution at k_max, repeatedly merges the two
    clusters with closest centroids, and, when ``R > 0`` and ``k mod R == 0``,
    refines the merged partition by K-means seeded from it.
    """
    if R < 0:
        raise DataError(f"refresh step must be >= 0, got {R}")
    if not 1 <= k_max <= D.n:
        raise DataError(f"k_max must be in [1, {D.n}], got {k_max}")
    path: dict[int, Partition] = {}
    if k_max == 1:
        path[1] = trivial_partition(D.n)
        return path
    current = kmeans(D, k_max, KMeansInit.random(), niter, derive_rng(seed, "refresh-top").integers(2**32))
    path[k_max] = current
    for k in range(k_max - 1, 0, -1):
        merged = merge_min_centroid(D, current)
        if R > 0 and k % R == 0 and k >= 2:
            current = kmeans(
                D, k, KMeansInit.from_partition(merged), niter,
                derive_rng(seed, "refresh", k).integers(2**32),
            )
        else:
            current = merged
        path[k] = current
    return path


def wcss_r_curve(D: DataMatrix, R: int, k_max: int, niter: int = 100, seed: int = 0) -> CurveSeries:
    """Approximate WCSS curve from the refresh descent."""
    path = refresh_descent(D, R, k_max, niter, seed)
    ks = list(range(1, k_max + 1))
    return CurveSeries(np.array(ks), np.array([wcss(D, path[k]) for k in ks]))


# ---------------------------------------------------------------------------
# Curve readers
# ---------------------------------------------------------------------------

def knee_detect(curve: CurveSeries, decreasing: bool = True) -> Prediction:
    """Largest discrete second difference marks the knee of a convex curve.

    Ties go to the smallest k and are flagged low-confidence; an affine curve
    ties everywhere and is therefore always flagged.
    """
    if len(curve) < 3:
        raise DataError("knee detection needs at least 3 curve points")
    v = curve.values if decreasing else -curve.values
    second = v[:-2] - 2.0 * v[1:-1] + v[2:]
    scale = max(1.0, float(np.abs(v).max()))
    best = float(second.max())
    tied = np.flatnonzero(second >= best - 1e-12 * scale)
    k_star = int(curve.k_values[1:-1][tied[0]])
    return Prediction(
        k_star,
        rule="knee-second-difference",
        evidence=curve,
        details={"low_confidence": tied.size > 1, "second_differences": second.tolist()},
    )


def _diff_series(ks: np.ndarray, values: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """DIFF(k) = (k-1)^(2/m) v(k-1) - k^(2/m) v(k) on consecutive grid points."""
    e = 2.0 / m
    diff_ks = ks[1:]
    diff = (ks[:-1] ** e) * values[:-1] - (diff_ks**e) * values[1:]
    return diff_ks, diff


def kl_predict(curve: CurveSeries, m: int) -> Prediction:
    """Ratio-of-successive-differences rule on a WCSS curve over [1, k_max]."""
    ks = curve.k_values
    if ks[0] != 1 or len(curve) < 4:
        raise DataError("the ratio rule needs a WCSS curve over [1, k_max] with k_max >= 4")
    diff_ks, diff = _diff_series(ks, curve.values, m)
    if np.all(diff == 0.0):
        return Prediction(NO_STRUCTURE, rule="kl-ratio", evidence=curve,
                          details={"reason": "all differences zero"})
    # KL(k) defined for k in [2, k_max-1]; a zero DIFF(k+1) wins as +inf
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.abs(diff[:-1] / diff[1:])
    ratios[np.isnan(ratios)] = 0.0
    ratios[(diff[1:] == 0.0) & (diff[:-1] != 0.0)] = np.inf
    k_star = int(diff_ks[:-1][int(np.argmax(ratios))])
    return Prediction(k_star, rule="kl-ratio", evidence=curve,
                      details={"kl_values": ratios.tolist(), "kl_k": diff_ks[:-1].tolist()})


# ---------------------------------------------------------------------------
# Figure of merit
# ---------------------------------------------------------------------------

def _fom_for_partition(column: np.ndarray, P: Partition, adjusted: bool = True) -> float:
    n = column.shape[0]
    dev = 0.0
    for c in range(P.k):
        vals = column[P.assignment == c]
        dev += float(((vals - vals.mean()) ** 2).sum())
    value = math.sqrt(dev / n)
    if adjusted:
        value /= math.sqrt((n - P.k) / n)
    return value


def fom_value(D: DataMatrix, clusterer: Clusterer, k: int, seed: int = 0) -> float:
    """Adjusted aggregate figure of merit at k.

    For every condition e the remaining columns are clustered into k groups
    and the left-out column's root-mean-square deviation around the cluster
    means is recorded, divided by sqrt((n-k)/n); the values are summed over e.
    """
    if not 1 <= k < D.n:
        raise DataError(f"k must be in [1, {D.n - 1}], got {k}")
    total = 0.0
    for e in range(D.m):
        reduced = D.drop_column(e) if D.m > 1 else D
        P = clusterer.cluster(reduced, k, derive_rng(seed, "fom", e, k).integers(2**32))
        total += _fom_for_partition(D.values[:, e], P)
    return total


def fom_curve(D: DataMatrix, clusterer: Clusterer, k_max: int, seed: int = 0) -> CurveSeries:
    """Adjusted aggregate FOM at every k in [1, k_max]."""
    if not 1 <= k_max < D.n:
        raise DataError(f"k_max must be in [1, {D.n - 1}], got {k_max}")
    ks = list(range(1, k_max + 1))
    totals = np.zeros(len(ks))
    for e in range(D.m):
        reduced = D.drop_column(e) if D.m > 1 else D
        partitions = clusterer.cluster_range(reduced, ks, derive_rng(seed, "fom", e).integers(2**32))
        column = D.values[:, e]
        for idx, k in enumerate(ks):
            totals[idx] += _fom_for_partition(column, partitions[k])
    return CurveSeries(np.array(ks), totals)


def fom_r_curve(D: DataMatrix, R: int, k_max: int, niter: int = 100, seed: int = 0) -> CurveSeries:
    """FOM curve approximated by the refresh descent per left-out condition."""
    if not 1 <= k_max < D.n:
        raise DataError(f"k_max must be in [1, {D.n - 1}], got {k_max}")
    ks = list(range(1, k_max + 1))
    totals = np.zeros(len(ks))
    for e in range(D.m):
        reduced = D.drop_column(e) if D.m > 1 else D
        path = refresh_descent(reduced, R, k_max, niter, derive_rng(seed, "fom-r", e).integers(2**32))
        column = D.values[:, e]
        for idx, k in enumerate(ks):
            totals[idx] += _fom_for_partition(column, path[k])
    return CurveSeries(np.array(ks), totals)


# ---------------------------------------------------------------------------
# Gap statistic and its geometric shortcut
# ---------------------------------------------------------------------------

def _gap_first_crossing(ks: np.ndarray, gap: np.ndarray, s: np.ndarray, valid: np.ndarray) -> int:
    """First k with Gap(k) >= Gap(k+1) - s(k+1); k_max (warned) when none."""
    k_max = int(ks[-1])
    for idx in range(ks.size - 1):
        if not (valid[idx] and valid[idx + 1]):
            continue
        if gap[idx] >= gap[idx + 1] - s[idx + 1]:
            return int(ks[idx])
    warnings.warn("no k satisfied the gap rule; reporting k_max", RuntimeWarning, stacklevel=3)
    return k_max


def _gap_majority(step_predictions: list[int]) -> tuple[int, Counter]:
    counts = Counter(step_predictions)
    top = max(counts.values())
    return min(k for k, c in counts.items() if c == top), counts


def _gap_step_statistics(log_obs: np.ndarray, log_null: np.ndarray, l: int, ks: np.ndarray):
    """Gap curve, simulation-error widths and validity mask of one step."""
    valid = np.isfinite(log_obs) & np.all(np.isfinite(log_null), axis=0)
    if not valid.all():
        warnings.warn(
            f"excluded k values with zero WCSS from the gap rule: {ks[~valid].tolist()}",
            RuntimeWarning,
            stacklevel=3,
        )
    gap = log_null.mean(axis=0) - log_obs
    sd = log_null.std(axis=0, ddof=0)
    s = math.sqrt(1.0 + 1.0 / l) * sd
    return gap, s, valid


def gap_predict(
    D: DataMatrix,
    clusterer: Clusterer,
    null_model: NullModel = NullModel.POISSON_BOX,
    l: int = 10,
    steps: int = 20,
    k_max: int = 10,
    seed: int = 0,
) -> Prediction:
    """Monte Carlo gap statistic with the first-crossing rule.

    Each step draws ``l`` null matrices, clusters everything over [1, k_max],
    and takes the first k with Gap(k) >= Gap(k+1) - s(k+1); the most frequent
    step prediction wins (ties to the smaller k).  WCSS values of zero are
    excluded from the rule with a warning, their logarithm being undefined.
    """
    if l < 2:
        raise DataError(f"needs at least 2 null matrices per step, got {l}")
    if steps < 1 or k_max < 2:
        raise DataError("needs steps >= 1 and k_max >= 2")
    ks = np.arange(1, k_max + 1)
    step_predictions: list[int] = []
    gap_sum = np.zeros(k_max)
    s_sum = np.zeros(k_max)

    for step in range(steps):
        obs_parts = clusterer.cluster_range(D, ks, derive_rng(seed, "gap-obs", step).integers(2**32))
        log_obs = np.array([_safe_log_wcss(D, obs_parts[k]) for k in ks])
        log_null = np.empty((l, k_max))
        for i in range(l):
            null_seed = int(derive_rng(seed, "gap-null", step, i).integers(2**32))
            D_i = generate_null(D, null_model, null_seed)
            parts = clusterer.cluster_range(D_i, ks, derive_rng(seed, "gap-null-cl", step, i).integers(2**32))
            log_null[i] = [_safe_log_wcss(D_i, parts[k]) for k in ks]

        gap, s, valid = _gap_step_statistics(log_obs, log_null, l, ks)
        gap_sum += np.where(valid, gap, 0.0)
        s_sum += np.where(valid, s, 0.0)
        step_predictions.append(_gap_first_crossing(ks, gap, s, valid))

    k_star, counts = _gap_majority(step_predictions)
    evidence = CurveSeries(ks, gap_sum / steps, s_sum / steps)
    return Prediction(
        k_star,
        rule="gap-first-crossing-majority",
        evidence=evidence,
        details={"step_predictions": step_predictions, "counts": dict(sorted(counts.items()))},
    )


def _safe_log_wcss(D: DataMatrix, P: Partition) -> float:
    value = wcss(D, P)
    return math.log(value) if value > 0.0 else -math.inf


def _chord_segments(curve: CurveSeries) -> np.ndarray:
    ks = curve.k_values.astype(float)
    v = curve.values
    span = ks[-1] - ks[0]
    chord = v[0] + (v[-1] - v[0]) * (ks - ks[0]) / span
    return chord - v


def _first_local_max(segment: np.ndarray) -> int:
    """Index of the first local maximum (plateaus count) as k increases."""
    n = segment.size
    for t in range(n):
        left_ok = t == 0 or segment[t] >= segment[t - 1]
        right_ok = t == n - 1 or segment[t] >= segment[t + 1]
        if left_ok and right_ok:
            return t
    return n - 1


def g_gap_predict(curve: CurveSeries, a: float = 0.0) -> Prediction:
    """Chord rule: first maximum of the chord-to-curve segment lengths.

    The offset ``a`` translates both chord endpoints, which shifts every
    segment by the same constant; the prediction is computed without it so
    the offset invariance is exact, and it only affects the emitted evidence.
    """
    if len(curve) < 3:
        raise DataError("the chord rule needs at least 3 curve points")
    segment = _chord_segments(curve)
    scale = max(1.0, float(np.abs(curve.values).max()))
    if segment.max() - segment.min() <= 1e-12 * scale:
        return Prediction(NO_STRUCTURE, rule="g-gap-chord", evidence=curve,
                          details={"reason": "flat curve", "offset": a})
    t = _first_local_max(segment)
    return Prediction(
        int(curve.k_values[t]),
        rule="g-gap-chord",
        evidence=CurveSeries(curve.k_values, segment + a),
        details={"offset": a},
    )


def g_fom_predict(curve: CurveSeries, a: float = 0.0) -> Prediction:
    """The chord rule applied verbatim to a FOM curve."""
    prediction = g_gap_predict(curve, a)
    return Prediction(prediction.k_star, rule="g-fom-chord", evidence=prediction.evidence,
                      details=prediction.details)


def diff_fom_predict(curve: CurveSeries, m: int) -> Prediction:
    """Maximum of DIFF(k) over [3, k_max] with FOM in place of WCSS."""
    ks = curve.k_values
    if len(curve) < 3 or ks[0] > 2:
        raise DataError("needs a FOM curve reaching k=2 with k_max >= 3")
    diff_ks, diff = _diff_series(ks, curve.values, m)
    eligible = diff_ks >= 3
    if not eligible.any():
        raise DataError("needs k_max >= 3")
    sub = diff[eligible]
    k_star = int(diff_ks[eligible][int(np.argmax(sub))])
    return Prediction(k_star, rule="diff-fom-max", evidence=curve,
                      details={"diff_values": diff.tolist(), "diff_k": diff_ks.tolist()})
