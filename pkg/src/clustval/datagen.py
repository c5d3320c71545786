"""Null models and data generation/perturbation procedures.

Each generator maps a data matrix to a derived matrix (plus the kept row
indices, for the subsampling variants) and is deterministic under its seed.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._rng import derive_rng
from .data import DataMatrix, Partition
from .errors import DataError, NumericalError

__all__ = [
    "NullModel",
    "DgpSpec",
    "apply_dgp",
    "null_permutational",
    "null_poisson_box",
    "null_poisson_pc",
    "null_unimodal",
    "generate_null",
    "subsample",
    "stratified_subsample",
    "noise_inject",
    "random_project",
    "jl_dimension",
]


class NullModel(enum.Enum):
    PERMUTATIONAL = "pr"
    POISSON_BOX = "ps"
    POISSON_PC = "pc"
    UNIMODAL = "unimodal"


@dataclass(frozen=True)
class DgpSpec:
    """Closed description of a data generation/perturbation procedure.

    kind is one of 'null', 'subsample', 'stratified-subsample', 'noise',
    'random-project'.
    """

    kind: str
    null_model: NullModel | None = None
    beta: float | None = None
    epsilon: float | None = None
    partition: Partition | None = None

    def __post_init__(self):
        if self.kind == "null":
            if self.null_model is None:
                raise DataError("null DGP needs a null model")
        elif self.kind in ("subsample", "stratified-subsample"):
            if self.beta is None or not 0.0 < self.beta < 1.0:
                raise DataError(f"subsampling fraction must be in (0,1), got {self.beta}")
            if self.kind == "stratified-subsample" and self.partition is None:
                raise DataError("stratified subsampling needs a partition")
        elif self.kind == "random-project":
            if self.epsilon is None or not 0.0 < self.epsilon < 1.0:
                raise DataError(f"distortion level must be in (0,1), got {self.epsilon}")
        elif self.kind != "noise":
            raise DataError(f"unknown DGP kind {self.kind!r}")

    @classmethod
    def null(cls, model: NullModel) -> "DgpSpec":
        return cls("null", null_model=model)

    @classmethod
    def subsample(cls, beta: float) -> "DgpSpec":
        return cls("subsample", beta=beta)

    @classmethod
    def stratified(cls, beta: float, partition: Partition) -> "DgpSpec":
        return cls("stratified-subsample", beta=beta, partition=partition)

    @classmethod
    def noise(cls) -> "DgpSpec":
        return cls("noise")

    @classmethod
    def random_project(cls, epsilon: float) -> "DgpSpec":
        return cls("random-project", epsilon=epsilon)


def apply_dgp(D: DataMatrix, spec: DgpSpec, seed: int) -> tuple[DataMatrix, np.ndarray | None]:
    """Dispatch to the concrete generator; kept rows only for subsampling."""
    if spec.kind == "null":
        return generate_null(D, spec.null_model, seed), None
    if spec.kind == "subsample":
        return subsample(D, spec.beta, seed)
    if spec.kind == "stratified-subsample":
        return stratified_subsample(D, spec.partition, spec.beta, seed)
    if spec.kind == "noise":
        return noise_inject(D, seed), None
    return random_project(D, spec.epsilon, seed), None


def generate_null(D: DataMatrix, model: NullModel, seed: int) -> DataMatrix:
    if model is NullModel.PERMUTATIONAL:
        return null_permutational(D, seed)
    if model is NullModel.POISSON_BOX:
        return null_poisson_box(D, seed)
    if model is NullModel.POISSON_PC:
        return null_poisson_pc(D, seed)
    return null_unimodal(D, seed)


def null_permutational(D: DataMatrix, seed: int) -> DataMatrix:
    """Permute the values of every column independently across rows.

    Column marginals are preserved exactly while any row structure is
    destroyed.
    """
    rng = derive_rng(seed, "null-pr")
    values = D.values.copy()
    for j in range(values.shape[1]):
        values[:, j] = values[rng.permutation(values.shape[0]), j]
    return DataMatrix(values, D.row_ids, D.feature_ids)


def null_poisson_box(D: DataMatrix, seed: int) -> DataMatrix:
    """Uniform draws from the axis-aligned bounding box of the data."""
    rng = derive_rng(seed, "null-ps")
    lo = D.values.min(axis=0)
    hi = D.values.max(axis=0)
    values = lo + (hi - lo) * rng.random(D.values.shape)
    return DataMatrix(values, D.row_ids, D.feature_ids)


def null_poisson_pc(D: DataMatrix, seed: int) -> DataMatrix:
    """Uniform draws from the bounding box aligned with the principal components.

    Columns are mean-centered, rotated by the right singular vectors, sampled
    box-uniformly in the rotated frame, rotated back, and the column means are
    restored so the null data lives in the original coordinates.
    """
    rng = derive_rng(seed, "null-pc")
    mean = D.values.mean(axis=0, keepdims=True)
    centered = D.values - mean
    try:
        _, _, vh = np.linalg.svd(centered, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed in principal-component null model: {exc}") from exc
    rotated = centered @ vh.T
    lo = rotated.min(axis=0)
    hi = rotated.max(axis=0)
    sample = lo + (hi - lo) * rng.random(rotated.shape)
    values = sample @ vh + mean
    return DataMatrix(values, D.row_ids, D.feature_ids)


def null_unimodal(D: DataMatrix, seed: int) -> DataMatrix:
    """Independent normal draws matching each feature's mean and sd."""
    rng = derive_rng(seed, "null-unimodal")
    mean = D.values.mean(axis=0)
    sd = D.values.std(axis=0, ddof=1) if D.n > 1 else np.zeros(D.m)
    values = mean + sd * rng.standard_normal(D.values.shape)
    return DataMatrix(values, D.row_ids, D.feature_ids)


def subsample_rows(n: int, beta: float, seed: int) -> np.ndarray:
    """Sorted row indices of a ceil(beta * n) draw without replacement."""
    if not 0.0 < beta < 1.0:
        raise DataError(f"subsampling fraction must be in (0,1), got {beta}")
    rng = derive_rng(seed, "subsample")
    n_prime = math.ceil(beta * n)
    return np.sort(rng.choice(n, size=n_prime, replace=False))


def subsample(D: DataMatrix, beta: float, seed: int) -> tuple[DataMatrix, np.ndarray]:
    """ceil(beta * n) distinct rows drawn uniformly without replacement."""
    kept = subsample_rows(D.n, beta, seed)
    return D.take_rows(kept), kept


def stratified_subsample(
    D: DataMatrix, P: Partition, beta: float, seed: int
) -> tuple[DataMatrix, np.ndarray]:
    """ceil(beta * |c|) rows from every cluster of P, without replacement."""
    if not 0.0 < beta < 1.0:
        raise DataError(f"subsampling fraction must be in (0,1), got {beta}")
    if P.n != D.n:
        raise DataError("partition does not cover the data matrix")
    rng = derive_rng(seed, "stratified-subsample")
    kept_parts = []
    for c in range(P.k):
        members = P.members(c)
        take = math.ceil(beta * members.size)
        kept_parts.append(rng.choice(members, size=take, replace=False))
    kept = np.sort(np.concatenate(kept_parts))
    return D.take_rows(kept), kept


def noise_inject(D: DataMatrix, seed: int) -> DataMatrix:
    """Add Gaussian noise with variance the median of the per-row variances."""
    rng = derive_rng(seed, "noise")
    variance = float(np.median(D.values.var(axis=1, ddof=1))) if D.m > 1 else 0.0
    values = D.values + math.sqrt(max(variance, 0.0)) * rng.standard_normal(D.values.shape)
    return DataMatrix(values, D.row_ids, D.feature_ids)


def jl_dimension(n: int, epsilon: float) -> int:
    """Target dimension ceil(4 (eps^2/2 - eps^3/3)^-1 ln n) of the JL bound."""
    if not 0.0 < epsilon < 1.0:
        raise DataError(f"distortion level must be in (0,1), got {epsilon}")
    return math.ceil(4.0 / (epsilon**2 / 2.0 - epsilon**3 / 3.0) * math.log(n))


def random_project(D: DataMatrix, epsilon: float, seed: int) -> DataMatrix:
    """Gaussian random projection to the Johnson-Lindenstrauss dimension.

    When the bound does not actually reduce the dimension the data is
    returned unchanged with a warning.
    """
    m_prime = jl_dimension(D.n, epsilon)
    if m_prime >= D.m:
        warnings.warn(
            f"projection target {m_prime} >= data dimension {D.m}; returning identity projection",
            RuntimeWarning,
            stacklevel=2,
        )
        return D
    rng = derive_rng(seed, "random-project")
    projection = rng.standard_normal((D.m, m_prime)) / math.sqrt(m_prime)
    values = D.values @ projection
    return DataMatrix(values, D.row_ids, tuple(f"proj{j}" for j in range(m_prime)))
