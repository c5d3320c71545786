"""Non-negative matrix factorization and its use as a clustering algorithm.

The factorization approximates V ~ W x H with V of shape (features x items),
W (features x r) holding the basis ("metagenes") and H (r x items) the
mixture coefficients.  Items are clustered by the argmax of their coefficient
column.  Three update strategies are available: the classic multiplicative
rules, their epsilon/delta-guarded modification with basis normalization, and
alternating least squares with projection to the non-negative orthant.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._rng import derive_rng
from .data import DataMatrix, Partition
from .errors import DataError, NumericalError

__all__ = [
    "NmfVariant",
    "StopRule",
    "Factorization",
    "nmf_objective",
    "nmf_objective_trace_form",
    "nmf_factorize",
    "nmf_cluster",
]

#: Guard added to multiplicative denominators; they can reach exact zero.
_DENOM_GUARD = 1e-12
#: Ridge applied to rank-deficient normal equations in the ALS solves.
_ALS_RIDGE = 1e-10


@dataclass(frozen=True)
class NmfVariant:
    """Update strategy: 'multiplicative', 'lin' (guarded) or 'als'."""

    kind: str = "multiplicative"
    epsilon: float = 1e-9
    delta: float = 1e-12

    def __post_init__(self):
        if self.kind not in ("multiplicative", "lin", "als"):
            raise DataError(f"unknown NMF variant {self.kind!r}")
        if self.kind == "lin" and (self.epsilon <= 0 or self.delta <= 0):
            raise DataError("the guarded update rules need positive epsilon and delta")

    @classmethod
    def multiplicative(cls) -> "NmfVariant":
        return cls("multiplicative")

    @classmethod
    def lin_modified(cls, epsilon: float = 1e-9, delta: float = 1e-12) -> "NmfVariant":
        return cls("lin", epsilon, delta)

    @classmethod
    def als(cls) -> "NmfVariant":
        return cls("als")


@dataclass(frozen=True)
class StopRule:
    """Iteration budget plus stationarity of the objective value.

    The run stops once the relative change of the objective over the last
    ``patience`` iterations falls below ``relative_tolerance``.
    """

    max_iterations: int = 2000
    relative_tolerance: float = 1e-6
    patience: int = 10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DataError("max_iterations must be >= 1")
        if self.relative_tolerance < 0:
            raise DataError("relative_tolerance must be >= 0")
        if self.patience < 1:
            raise DataError("patience must be >= 1")

    def satisfied(self, trace: list[float]) -> bool:
        if len(trace) >= self.max_iterations:
            return True
        if len(trace) <= self.patience:
            return False
        old = trace[-1 - self.patience]
        return abs(trace[-1] - old) <= self.relative_tolerance * max(abs(old), 1e-300)


@dataclass(frozen=True)
class Factorization:
    W: np.ndarray
    H: np.ndarray
    objective_trace: np.ndarray
    iterations_run: int

    def __post_init__(self):
        for name in ("W", "H"):
            a = np.asarray(getattr(self, name), dtype=float)
            if (a < 0).any():
                raise NumericalError(f"{name} contains negative entries")
            a = a.copy()
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        trace = np.asarray(self.objective_trace, dtype=float).copy()
        trace.flags.writeable = False
        object.__setattr__(self, "objective_trace", trace)


def nmf_objective(V: np.ndarray, W: np.ndarray, H: np.ndarray) -> float:
    """f(W, H) = 1/2 ||V - W H||_F^2, evaluated directly."""
    residual = V - W @ H
    return 0.5 * float((residual * residual).sum())


def nmf_objective_trace_form(V: np.ndarray, W: np.ndarray, H: np.ndarray) -> float:
    """The same objective through the expanded trace identity."""
    wtv = W.T @ V
    wtw = W.T @ W
    return 0.5 * (float((V * V).sum()) - 2.0 * float((wtv * H).sum()) + float((wtw @ H * H).sum()))


def _update_multiplicative(V, W, H, variant):
    H = H * (W.T @ V) / (W.T @ W @ H + _DENOM_GUARD)
    W = W * (V @ H.T) / (W @ H @ H.T + _DENOM_GUARD)
    return W, H


def _update_lin(V, W, H, variant):
    eps, delta = variant.epsilon, variant.delta
    grad_h = W.T @ (W @ H - V)
    h_bar = np.where(grad_h >= 0, H, np.maximum(H, eps))
    H = H - h_bar / (W.T @ W @ h_bar + delta) * grad_h
    grad_w = (W @ H - V) @ H.T
    w_bar = np.where(grad_w >= 0, W, np.maximum(W, eps))
    W = W - w_bar / (w_bar @ H @ H.T + delta) * grad_w
    # keep the iterates bounded: columns of W sum to one, H compensates
    scale = W.sum(axis=0)
    nonzero = scale > 0
    W = np.where(nonzero[None, :], W / np.where(nonzero, scale, 1.0)[None, :], W)
    H = np.where(nonzero[:, None], H * np.where(nonzero, scale, 1.0)[:, None], H)
    return W, H


def _update_als(V, W, H, variant):
    r = W.shape[1]
    ridge = _ALS_RIDGE * np.eye(r)
    try:
        H = np.linalg.solve(W.T @ W + ridge, W.T @ V)
        H = np.maximum(H, 0.0)
        W = np.linalg.solve(H @ H.T + ridge, H @ V.T).T
        W = np.maximum(W, 0.0)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"ALS normal equations unsolvable: {exc}") from exc
    return W, H


_UPDATES = {"multiplicative": _update_multiplicative, "lin": _update_lin, "als": _update_als}


def nmf_factorize(
    V: np.ndarray,
    r: int,
    variant: NmfVariant | None = None,
    stop: StopRule | None = None,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    seed: int = 0,
) -> Factorization:
    """Factorize a non-negative matrix at rank r under the selected rule.

    ``init`` supplies (W, H) directly; otherwise both are drawn uniformly,
    scaled to the magnitude of V.  The objective is recorded after every
    update; for the multiplicative and guarded rules it is non-increasing.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim != 2:
        raise DataError("V must be a matrix")
    if (V < 0).any():
        raise DataError("V must be non-negative")
    m, n = V.shape
    if not 1 <= r < min(m, n):
        raise DataError(f"rank must be in [1, {min(m, n) - 1}], got {r}")
    variant = variant or NmfVariant.multiplicative()
    stop = stop or StopRule()

    if init is not None:
        W = np.asarray(init[0], dtype=float).copy()
        H = np.asarray(init[1], dtype=float).copy()
        if W.shape != (m, r) or H.shape != (r, n):
            raise DataError(f"init shapes must be {(m, r)} and {(r, n)}")
        if (W < 0).any() or (H < 0).any():
            raise DataError("init factors must be non-negative")
    else:
        rng = derive_rng(seed, "nmf-init", r)
        scale = np.sqrt(max(V.mean(), 1e-12) / r)
        W = scale * rng.random((m, r))
        H = scale * rng.random((r, n))

    update = _UPDATES[variant.kind]
    trace: list[float] = []
    while not stop.satisfied(trace):
        W, H = update(V, W, H, variant)
        trace.append(nmf_objective(V, W, H))
    return Factorization(W, H, np.array(trace), len(trace))


def _partition_init(V: np.ndarray, partition: Partition, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indicator coefficients and centroid basis built from a partition."""
    n = V.shape[1]
    H = np.zeros((k, n))
    H[partition.assignment, np.arange(n)] = 1.0
    sizes = partition.sizes().astype(float)
    W = (V @ H.T) / sizes[None, :]
    return W, H


def nmf_cluster_with_factorization(
    D: DataMatrix,
    k: int,
    variant: NmfVariant | None = None,
    stop: StopRule | None = None,
    init_partition: Partition | None = None,
    seed: int = 0,
    shift_negative: bool = False,
) -> tuple[Partition, Factorization]:
    """Cluster items by the argmax of their factorization coefficients.

    The item matrix is transposed into the (features x items) convention and
    factorized at rank k; item i joins cluster argmax_j H[j, i] with ties to
    the lowest j.  Negative data is refused unless ``shift_negative`` allows
    translating by the global minimum.
    """
    values = D.values
    lo = float(values.min())
    if lo < 0:
        if not shift_negative:
            raise DataError(
                "data contains negative entries; pass shift_negative=True to translate by the minimum"
            )
        values = values - lo
    V = values.T
    if not 2 <= k < min(D.n, D.m):
        raise DataError(f"k must be in [2, {min(D.n, D.m) - 1}], got {k}")
    init = _partition_init(V, init_partition, k) if init_partition is not None else None
    fact = nmf_factorize(V, k, variant, stop, init, seed)

    assignment = np.argmax(fact.H, axis=0)
    counts = np.bincount(assignment, minlength=k)
    for empty in np.flatnonzero(counts == 0):
        movable = counts[assignment] > 1
        if not movable.any():
            raise NumericalError("cannot repair empty cluster: all clusters are singletons")
        weights = np.where(movable, fact.H[empty], -np.inf)
        donor = int(np.argmax(weights))
        counts[assignment[donor]] -= 1
        assignment[donor] = empty
        counts[empty] += 1
        warnings.warn(f"empty metagene cluster {int(empty)} repaired", RuntimeWarning, stacklevel=2)
    return Partition(assignment, k), fact


def nmf_cluster(
    D: DataMatrix,
    k: int,
    variant: NmfVariant | None = None,
    stop: StopRule | None = None,
    init_partition: Partition | None = None,
    seed: int = 0,
    shift_negative: bool = False,
) -> Partition:
    """The metagene-argmax clustering without the factorization byproduct."""
    partition, _ = nmf_cluster_with_factorization(
        D, k, variant, stop, init_partition, seed, shift_negative
    )
    return partition
