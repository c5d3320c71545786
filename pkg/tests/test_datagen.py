import math

import numpy as np
import pytest

from clustval.data import DataMatrix, Partition
from clustval.datagen import (
    DgpSpec,
    NullModel,
    apply_dgp,
    jl_dimension,
    noise_inject,
    null_permutational,
    null_poisson_box,
    null_poisson_pc,
    null_unimodal,
    random_project,
    stratified_subsample,
    subsample,
)
from clustval.errors import DataError


def random_matrix(seed=0, n=20, m=5, loc=1.0, scale=2.0):
    rng = np.random.default_rng(seed)
    return DataMatrix(rng.normal(loc, scale, (n, m)))


# ---------------------------------------------------------------------------
# dispatch and determinism
# ---------------------------------------------------------------------------

def test_apply_dgp_dispatch_and_kept_rows():
    D = random_matrix(n=100)
    out, kept = apply_dgp(D, DgpSpec.subsample(0.8), seed=1)
    assert out.n == 80 and kept.shape == (80,)
    out, kept = apply_dgp(D, DgpSpec.null(NullModel.PERMUTATIONAL), seed=1)
    assert kept is None and out.values.shape == D.values.shape


def test_apply_dgp_deterministic():
    D = random_matrix()
    for spec in (
        DgpSpec.subsample(0.7),
        DgpSpec.null(NullModel.POISSON_BOX),
        DgpSpec.null(NullModel.UNIMODAL),
        DgpSpec.noise(),
    ):
        a, _ = apply_dgp(D, spec, seed=9)
        b, _ = apply_dgp(D, spec, seed=9)
        assert np.array_equal(a.values, b.values)


def test_dgp_spec_validation():
    with pytest.raises(DataError):
        DgpSpec.subsample(1.0)
    with pytest.raises(DataError):
        DgpSpec.random_project(0.0)
    with pytest.raises(DataError):
        DgpSpec("bogus")


# ---------------------------------------------------------------------------
# null models
# ---------------------------------------------------------------------------

def test_permutational_preserves_column_marginals():
    D = random_matrix(1)
    out = null_permutational(D, seed=2)
    for j in range(D.m):
        assert sorted(out.values[:, j]) == pytest.approx(sorted(D.values[:, j]))
    assert np.allclose(out.values.mean(axis=0), D.values.mean(axis=0))
    assert np.allclose(out.values.var(axis=0), D.values.var(axis=0))


def test_permutational_changes_row_distances():
    # two tight clouds: permuting columns destroys the cloud structure
    rng = np.random.default_rng(3)
    X = np.vstack([rng.normal(0, 0.1, (10, 4)), rng.normal(50, 0.1, (10, 4))])
    D = DataMatrix(X)
    out = null_permutational(D, seed=1)
    before = np.linalg.norm(X[0] - X[10])
    after_rows = np.linalg.norm(out.values[0] - out.values[10])
    assert abs(after_rows - before) > 1.0


def test_poisson_box_stays_in_box():
    D = random_matrix(4)
    out = null_poisson_box(D, seed=5)
    lo, hi = D.values.min(axis=0), D.values.max(axis=0)
    assert np.all(out.values >= lo - 1e-12) and np.all(out.values <= hi + 1e-12)


def test_poisson_box_uniform_mean():
    D = random_matrix(5, n=400)
    out = null_poisson_box(D, seed=6)
    lo, hi = D.values.min(axis=0), D.values.max(axis=0)
    mid = (lo + hi) / 2
    tolerance = 4 * (hi - lo) / math.sqrt(12 * D.n)
    assert np.all(np.abs(out.values.mean(axis=0) - mid) < tolerance)


def test_poisson_box_constant_feature():
    values = np.ones((10, 2))
    values[:, 1] = np.arange(10)
    out = null_poisson_box(DataMatrix(values), seed=7)
    assert np.all(out.values[:, 0] == 1.0)


def test_poisson_pc_axis_aligned_matches_box_ranges():
    # diagonal-covariance data: the principal axes are the coordinate axes,
    # so the rotated box equals the plain box up to sign flips
    rng = np.random.default_rng(8)
    X = rng.normal(0, 1, (500, 2)) * np.array([5.0, 0.5])
    D = DataMatrix(X)
    pc = null_poisson_pc(D, seed=9)
    box_range = D.values.max(axis=0) - D.values.min(axis=0)
    pc_range = pc.values.max(axis=0) - pc.values.min(axis=0)
    assert np.all(np.abs(pc_range / box_range - 1.0) < 0.15)


def test_poisson_pc_preserves_column_means():
    # the rotated box is only symmetric around the data mean when the input
    # extremes are; bounded uniform input keeps the midpoint wobble far below
    # the moment tolerance (heavy-tailed inputs shift the box systematically)
    rng = np.random.default_rng(10)
    D = DataMatrix(7.0 + rng.random((300, 5)) * np.array([1.0, 2.0, 0.5, 3.0, 1.5]))
    sd = D.values.std(axis=0)
    out = null_poisson_pc(D, seed=11)
    assert np.all(np.abs(out.values.mean(axis=0) - D.values.mean(axis=0)) < 4 * sd / math.sqrt(D.n))
    assert out.values.shape == D.values.shape


def test_unimodal_matches_feature_moments():
    D = random_matrix(12, n=500, loc=3.0, scale=1.5)
    out = null_unimodal(D, seed=13)
    mean, sd = D.values.mean(axis=0), D.values.std(axis=0, ddof=1)
    assert np.all(np.abs(out.values.mean(axis=0) - mean) < 4 * sd / math.sqrt(D.n))
    assert np.all(np.abs(out.values.std(axis=0, ddof=1) / sd - 1.0) < 0.2)


def test_unimodal_constant_feature():
    values = np.tile([2.0, 0.0], (8, 1))
    values[:, 1] = np.arange(8)
    out = null_unimodal(DataMatrix(values), seed=1)
    assert np.all(out.values[:, 0] == 2.0)


# ---------------------------------------------------------------------------
# subsampling
# ---------------------------------------------------------------------------

def test_subsample_sizes():
    D = random_matrix(14, n=100)
    out, kept = subsample(D, 0.8, seed=3)
    assert out.n == 80
    assert np.array_equal(out.values, D.values[kept])
    D2 = random_matrix(15, n=112)
    out2, _ = subsample(D2, 0.66, seed=3)
    assert out2.n == 74  # ceil(0.66 * 112)


def test_subsample_rows_strictly_increasing_unique():
    D = random_matrix(16, n=50)
    _, kept = subsample(D, 0.6, seed=8)
    assert np.all(np.diff(kept) > 0)


def test_stratified_subsample_per_cluster_counts():
    D = random_matrix(17, n=30)
    P = Partition(np.repeat([0, 1, 2], 10), 3)
    out, kept = stratified_subsample(D, P, 0.8, seed=5)
    taken = np.bincount(P.assignment[kept], minlength=3)
    assert taken.tolist() == [8, 8, 8]
    assert np.all(np.diff(kept) > 0)


# ---------------------------------------------------------------------------
# noise injection
# ---------------------------------------------------------------------------

def test_noise_zero_variance_rows_unchanged():
    values = np.tile(np.array([[1.0], [2.0], [3.0]]), (1, 6))
    D = DataMatrix(values)
    out = noise_inject(D, seed=3)
    assert np.array_equal(out.values, values)


def test_noise_half_normal_magnitude():
    D = random_matrix(18, n=60, m=40, scale=2.0)
    sigma = math.sqrt(np.median(D.values.var(axis=1, ddof=1)))
    out = noise_inject(D, seed=4)
    magnitude = np.abs(out.values - D.values).mean()
    expected = math.sqrt(2 / math.pi) * sigma
    assert magnitude == pytest.approx(expected, rel=0.05)
    assert out.values.shape == D.values.shape


# ---------------------------------------------------------------------------
# random projection
# ---------------------------------------------------------------------------

def test_jl_dimension_closed_form():
    expected = math.ceil(4.0 / (0.5**2 / 2 - 0.5**3 / 3) * math.log(1000))
    assert jl_dimension(1000, 0.5) == expected
    assert jl_dimension(1000, 0.5) == 332


def test_random_project_shape_and_distortion():
    rng = np.random.default_rng(19)
    D = DataMatrix(rng.normal(0, 1, (50, 3000)))
    m_prime = jl_dimension(50, 0.5)
    hits = []
    for seed in range(20):
        out = random_project(D, 0.5, seed=seed)
        assert out.m == m_prime
        orig = np.linalg.norm(D.values[:, None] - D.values[None, :], axis=2)
        proj = np.linalg.norm(out.values[:, None] - out.values[None, :], axis=2)
        iu = np.triu_indices(50, 1)
        ratio = (proj[iu] / orig[iu]) ** 2
        hits.append(np.mean((ratio >= 1 - 0.5) & (ratio <= 1 + 0.5)))
    assert np.mean(hits) >= 0.70


def test_random_project_identity_when_not_reducing():
    D = random_matrix(20, n=100, m=4)
    with pytest.warns(RuntimeWarning):
        out = random_project(D, 0.5, seed=0)
    assert out.values.shape == D.values.shape
    assert np.array_equal(out.values, D.values)


def test_apply_dgp_remaining_variants():
    rng = np.random.default_rng(30)
    D = DataMatrix(rng.normal(0, 1, (40, 2000)))
    out, kept = apply_dgp(D, DgpSpec.random_project(0.5), seed=2)
    assert kept is None and out.m == jl_dimension(40, 0.5)
    P = Partition(np.repeat([0, 1], 20), 2)
    out, kept = apply_dgp(D, DgpSpec.stratified(0.5, P), seed=2)
    assert out.n == 20 and np.bincount(P.assignment[kept]).tolist() == [10, 10]
    out, kept = apply_dgp(D, DgpSpec.noise(), seed=2)
    assert kept is None and out.values.shape == D.values.shape
