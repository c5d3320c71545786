import numpy as np
import pytest

from clustval.errors import DataError
from clustval.indices import (
    ContingencyTable,
    adjusted_rand,
    contingency,
    f_index,
    fm_index,
    pair_counts,
    rand_index,
)

from conftest import random_partition

# the 5x5 random-agreement example table (n = 29)
EXAMPLE_TABLE = np.array(
    [
        [1, 4, 2, 1, 2],
        [0, 1, 1, 0, 1],
        [1, 2, 0, 2, 0],
        [2, 1, 0, 1, 2],
        [1, 0, 1, 0, 3],
    ]
)


def pair_loop_counts(a, b):
    """O(n^2) enumeration oracle for the pair counts."""
    n = len(a)
    A = B = C = D = 0
    for i in range(n):
        for j in range(i + 1, n):
            same_a = a[i] == a[j]
            same_b = b[i] == b[j]
            A += same_a and same_b
            B += same_a and not same_b
            C += same_b and not same_a
            D += not same_a and not same_b
    return A, B, C, D


def test_example_table_marginals():
    T = ContingencyTable(EXAMPLE_TABLE)
    assert T.n == 29
    assert T.row_sums.tolist() == [10, 3, 5, 6, 5]
    assert T.col_sums.tolist() == [5, 8, 4, 4, 8]


def test_example_table_reference_values():
    T = ContingencyTable(EXAMPLE_TABLE)
    assert rand_index(T) == pytest.approx(0.677, abs=5e-4)
    # exact value on this table is -384/26209 = -0.014651...; the commonly
    # quoted -0.014 is a truncation of the third decimal
    assert adjusted_rand(T) == pytest.approx(-384 / 26209, abs=5e-4)
    assert fm_index(T) == pytest.approx(0.186, abs=5e-4)
    assert f_index(T, b=1.0) == pytest.approx(0.414, abs=5e-4)


def test_identical_partitions_score_one():
    labels = np.array([0, 0, 1, 1, 2, 2, 2])
    T = contingency(labels, labels)
    assert rand_index(T) == 1.0
    assert adjusted_rand(T) == 1.0
    assert fm_index(T) == 1.0
    assert f_index(T) == 1.0


def test_pair_counts_match_enumeration():
    rng = np.random.default_rng(0)
    for trial in range(30):
        n = int(rng.integers(4, 11))
        a = random_partition(rng, n, int(rng.integers(2, 4))).assignment
        b = random_partition(rng, n, int(rng.integers(2, 4))).assignment
        pc = pair_counts(contingency(a, b))
        assert (pc.a, pc.b, pc.c, pc.d) == pair_loop_counts(a, b)
        assert pc.total == n * (n - 1) // 2


def test_rand_matches_pair_loop_exactly():
    rng = np.random.default_rng(1)
    for trial in range(20):
        a = random_partition(rng, 8, 3).assignment
        b = random_partition(rng, 8, 2).assignment
        A, B, C, D = pair_loop_counts(a, b)
        assert rand_index(contingency(a, b)) == (A + D) / (A + B + C + D)


def test_fm_matches_pair_count_identity():
    rng = np.random.default_rng(2)
    for trial in range(20):
        n = int(rng.integers(5, 11))
        a = random_partition(rng, n, 3).assignment
        b = random_partition(rng, n, 3).assignment
        A, B, C, _ = pair_loop_counts(a, b)
        expected = A / np.sqrt((A + B) * (A + C))
        assert fm_index(contingency(a, b)) == pytest.approx(expected, rel=1e-12)


def test_adjusted_rand_zero_mean_under_permutation():
    rng = np.random.default_rng(3)
    base = random_partition(rng, 40, 4).assignment
    other = random_partition(rng, 40, 3).assignment
    values = []
    for _ in range(1000):
        perm = rng.permutation(40)
        values.append(adjusted_rand(contingency(base, other[perm])))
    assert abs(np.mean(values)) < 0.02


def test_f_index_single_cluster_closed_form():
    rng = np.random.default_rng(4)
    labels = random_partition(rng, 24, 3).assignment
    single = np.zeros(24, dtype=int)
    T = contingency(labels, single)
    n = 24
    sizes = np.bincount(labels)
    expected = sum((s / n) * (2 * (s / n) * 1.0) / ((s / n) + 1.0) for s in sizes)
    assert f_index(T) == pytest.approx(expected, rel=1e-12)


def test_indices_invariant_under_relabeling():
    rng = np.random.default_rng(5)
    a = random_partition(rng, 20, 3).assignment
    b = random_partition(rng, 20, 4).assignment
    relabel_a = (2 - a) % 3
    relabel_b = (b + 1) % 4
    for fn in (rand_index, adjusted_rand, fm_index, f_index):
        assert fn(contingency(a, b)) == pytest.approx(fn(contingency(relabel_a, relabel_b)), rel=1e-12)


def test_rand_and_fm_symmetric_f_is_not():
    rng = np.random.default_rng(6)
    a = random_partition(rng, 15, 2).assignment
    b = random_partition(rng, 15, 4).assignment
    assert rand_index(contingency(a, b)) == pytest.approx(rand_index(contingency(b, a)), rel=1e-12)
    assert fm_index(contingency(a, b)) == pytest.approx(fm_index(contingency(b, a)), rel=1e-12)
    # the counterexample: a 2-class reference against a 4-cluster refinement
    f_ab = f_index(contingency(a, b))
    f_ba = f_index(contingency(b, a))
    assert f_ab != pytest.approx(f_ba, abs=1e-6)


def test_fm_undefined_for_all_singletons():
    labels = np.arange(6)
    with pytest.raises(DataError):
        fm_index(contingency(labels, labels))


def test_adjusted_rand_zero_denominator_warns():
    single = np.zeros(5, dtype=int)
    with pytest.warns(RuntimeWarning):
        value = adjusted_rand(contingency(single, single))
    assert value == 0.0


def test_contingency_counts_intersections():
    a = np.array([0, 0, 1, 1, 2])
    b = np.array([1, 1, 0, 1, 0])
    T = contingency(a, b)
    assert T.counts.tolist() == [[0, 2], [1, 1], [1, 0]]
    with pytest.raises(DataError):
        contingency(a, b[:4])


def test_wide_integer_pair_arithmetic():
    # two balanced partitions of 100000 items; the intermediate products
    # overflow 64-bit arithmetic unless accumulated in Python integers
    n = 100_000
    a = np.arange(n) % 2
    b = np.arange(n) % 4
    T = contingency(a, b)
    pc = pair_counts(T)
    assert pc.total == n * (n - 1) // 2
    assert 0.0 <= rand_index(T) <= 1.0
    assert adjusted_rand(T) <= 1.0


def test_perfect_agreement_iff_identical():
    rng = np.random.default_rng(7)
    for trial in range(40):
        n = int(rng.integers(4, 10))
        a = random_partition(rng, n, int(rng.integers(2, 4))).assignment
        if trial % 3 == 0:
            b = (a + 1) % (int(a.max()) + 1)  # relabeled copy
        else:
            b = random_partition(rng, n, int(rng.integers(2, 4))).assignment
        T = contingency(a, b)
        identical = pair_loop_counts(a, b)[1:3] == (0, 0)  # no disagreeing pairs
        assert (rand_index(T) == 1.0) == identical
        assert (adjusted_rand(T) == pytest.approx(1.0)) == identical
