import itertools

import numpy as np
import pytest

from clustval.data import DataMatrix
from clustval.datagen import NullModel
from clustval.errors import DataError
from clustval.indices import adjusted_rand, contingency
from clustval.measures import CurveSeries, HierClusterer, KMeansClusterer, Prediction, wcss
from clustval.stability import (
    ConsensusResult,
    ConsensusState,
    NearestCentroidClassifier,
    StabilityConfig,
    _clest_decision,
    bagclust1,
    bagclust2,
    clest_run,
    consensus_cdf,
    consensus_cdf_area,
    consensus_run,
    consensus_to_distance,
    fc_run,
    levine_domany_run,
    max_overlap_matching,
    me_run,
    mecca,
    roth_run,
)

from conftest import make_single_cloud, make_two_cloud


HC = HierClusterer()


def cfg_for(D, k_max=5, H=8, seed=13, **kw):
    return StabilityConfig(k_min=2, k_max=k_max, H=H, clusterers=(HC,),
                           external_index="fm", seed=seed, **kw)


# ---------------------------------------------------------------------------
# MECCA
# ---------------------------------------------------------------------------

def test_mecca_constant_statistic():
    D, _ = make_two_cloud(n1=8, n2=8)
    P = HC.cluster(D, 2, 0)
    p = mecca(10, HC, D, lambda d, part: 1.0, P, seed=1)
    assert p == 0.0  # nothing is strictly larger than a constant


def test_mecca_observed_below_all_nulls():
    D, _ = make_two_cloud(n1=8, n2=8)
    P = HC.cluster(D, 2, 0)
    p = mecca(10, HC, D, lambda d, part: -d.values.sum() * 0 + (0.0 if d is D else 1.0), P, seed=1)
    assert p == 1.0


def test_mecca_real_structure_beats_null():
    rejections = 0
    for seed in range(10):
        D, _ = make_two_cloud(seed=100 + seed, n1=12, n2=12, gap=9.0)
        P = HC.cluster(D, 2, 0)
        p = mecca(50, HC, D, lambda d, part: -wcss(d, part), P,
                  null_model=NullModel.POISSON_BOX, seed=seed)
        rejections += p <= 0.05
    assert rejections >= 9


# ---------------------------------------------------------------------------
# maximum-overlap matching
# ---------------------------------------------------------------------------

def brute_force_overlap(a1, a2, k):
    best = -1
    for perm in itertools.permutations(range(k)):
        mapped = np.array([perm[v] for v in a2])
        best = max(best, int(np.sum(mapped == a1)))
    return best


def test_matching_recovers_permuted_labels():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 3, 30)
    a[:3] = [0, 1, 2]
    permuted = (a + 1) % 3
    relabeled, overlap = max_overlap_matching(a, permuted)
    assert overlap == 30
    assert np.array_equal(relabeled, a)


def test_matching_optimal_vs_factorial():
    rng = np.random.default_rng(1)
    for trial in range(40):
        n = int(rng.integers(4, 9))
        k = int(rng.integers(2, 5))
        a1 = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
        a2 = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
        _, overlap = max_overlap_matching(a1, a2)
        assert overlap == brute_force_overlap(a1, a2, k)


def test_matching_single_cluster_takes_largest():
    a1 = np.array([0, 0, 0, 1, 1, 2])
    single = np.zeros(6, dtype=int)
    _, overlap = max_overlap_matching(a1, single)
    assert overlap == 3


# ---------------------------------------------------------------------------
# bootstrap aggregation
# ---------------------------------------------------------------------------

def test_bagclust1_two_clouds():
    D, gold = make_two_cloud(gap=10.0)
    P = bagclust1(D, HC, 2, 20, seed=7)
    assert adjusted_rand(contingency(gold.labels, P.assignment)) == pytest.approx(1.0)


def test_bagclust1_deterministic():
    D, _ = make_two_cloud()
    a = bagclust1(D, KMeansClusterer(), 2, 5, seed=3)
    b = bagclust1(D, KMeansClusterer(), 2, 5, seed=3)
    assert np.array_equal(a.assignment, b.assignment)


def test_bagclust1_single_round_follows_base():
    D, gold = make_two_cloud(gap=10.0)
    P = bagclust1(D, HC, 2, 1, seed=5)
    base = HC.cluster(D, 2, 0)
    _, overlap = max_overlap_matching(base.assignment, P.assignment)
    assert overlap == D.n


def test_bagclust2_two_clouds():
    D, gold = make_two_cloud(gap=10.0)
    diss, P = bagclust2(D, HC, 2, 12, beta=0.8, seed=2)
    assert adjusted_rand(contingency(gold.labels, P.assignment)) == pytest.approx(1.0)
    within = gold.labels[:, None] == gold.labels[None, :]
    iu = np.triu_indices(D.n, 1)
    assert diss[iu][within[iu]].mean() < diss[iu][~within[iu]].mean()
    # stable pairs are never separated
    assert diss[0, 1] == 0.0


def test_bagclust2_never_cosampled_pair_warns():
    rng = np.random.default_rng(3)
    D = DataMatrix(rng.normal(0, 1, (10, 2)))
    with pytest.warns(RuntimeWarning):
        diss, _ = bagclust2(D, HC, 2, 1, beta=0.6, seed=4)
    # with one round of six kept rows, some pair was never co-sampled
    assert (diss == 1.0).any()


# ---------------------------------------------------------------------------
# Model Explorer
# ---------------------------------------------------------------------------

def test_me_two_clouds():
    D, _ = make_two_cloud(gap=10.0)
    result = me_run(D, cfg_for(D, H=20))
    assert result.prediction.k_star == 2
    assert np.mean(result.values[2] > 0.9) >= 0.9
    assert np.std(result.values[5]) > np.std(result.values[2])


def test_me_histograms_sum_to_h():
    D, _ = make_two_cloud()
    result = me_run(D, cfg_for(D, H=11))
    for k in result.values:
        counts, _ = result.histogram(k)
        assert counts.sum() == 11


# ---------------------------------------------------------------------------
# Clest
# ---------------------------------------------------------------------------

def test_clest_two_clouds_defaults():
    D, _ = make_two_cloud(gap=8.0)
    result = clest_run(D, cfg_for(D, H=20), B0=20)
    assert result.prediction.k_star == 2


def test_clest_single_cloud_no_structure():
    D = make_single_cloud()
    result = clest_run(D, cfg_for(D, H=20), B0=20)
    assert result.prediction.k_star == 1


def test_clest_rule_arithmetic_p_max_zero():
    ks = [2, 3]
    t = {2: 0.9, 3: 0.8}
    t0 = {2: 0.5, 3: 0.5}
    d = {2: 0.4, 3: 0.3}
    result = _clest_decision(ks, t, t0, {2: 0.2, 3: 0.1}, d, p_max=0.0, d_min=0.05)
    assert result.prediction.k_star == 1  # no p is exactly zero
    result = _clest_decision(ks, t, t0, {2: 0.0, 3: 0.1}, d, p_max=0.0, d_min=0.05)
    assert result.prediction.k_star == 2


def test_classifier_nearest_centroid():
    X = np.array([[0.0, 0.0], [0.2, 0.0], [5.0, 5.0], [5.2, 5.0]])
    clf = NearestCentroidClassifier.fit(X, np.array([0, 0, 1, 1]), 2)
    assert clf.trained
    assert clf.predict(np.array([[0.1, -0.1], [4.9, 5.1]])).tolist() == [0, 1]


# ---------------------------------------------------------------------------
# Levine-Domany and Roth
# ---------------------------------------------------------------------------

def test_levine_domany_two_clouds():
    D, _ = make_two_cloud(gap=10.0)
    curve, prediction = levine_domany_run(D, cfg_for(D, H=15, beta=0.8))
    assert prediction.k_star == 2
    assert curve.value_at(2) > 0.99
    assert np.all((curve.values >= 0.0) & (curve.values <= 1.0))


def test_levine_domany_h1_smoke():
    D, _ = make_two_cloud(n1=10, n2=10)
    curve, _ = levine_domany_run(D, cfg_for(D, H=1))
    assert len(curve) == 4


def test_roth_stable_structure_zero_instability():
    D, _ = make_two_cloud(gap=10.0)
    curve, prediction = roth_run(D, cfg_for(D, H=10, alpha=0.5))
    assert prediction.k_star == 2
    assert curve.value_at(2) == pytest.approx(0.0, abs=1e-12)


def test_roth_random_labelers_normalization():
    # normalized misclassification of two independent uniform labelings is
    # close to one; this pins the 1 - 1/k normalizing constant
    rng = np.random.default_rng(6)
    n, k = 4000, 4
    values = []
    for _ in range(10):
        a = rng.integers(0, k, n)
        b = rng.integers(0, k, n)
        _, overlap = max_overlap_matching(a, b)
        values.append((1.0 - overlap / n) / (1.0 - 1.0 / k))
    assert np.mean(values) == pytest.approx(1.0, abs=0.02)


# ---------------------------------------------------------------------------
# Consensus and FC
# ---------------------------------------------------------------------------

def test_consensus_state_invariants():
    D, _ = make_two_cloud(n1=10, n2=10)
    result = consensus_run(D, HC, H=9, p=0.7, k_range=range(2, 5), seed=3)
    for k, state in result.states.items():
        state.check()
        assert (state.M <= state.I).all()
        assert state.I.max() <= 9
        cons = result.consensus[k]
        defined = ~np.isnan(cons)
        assert np.nanmin(cons) >= 0.0 and np.nanmax(cons) <= 1.0
    assert np.all((result.area.values >= 0.0) & (result.area.values <= 1.0))


def test_consensus_two_valued_closed_form():
    # a huge gap makes every round reproduce the gold split at k=2, so the
    # consensus entries are exactly {0, 1} and the area under the CDF equals
    # the fraction of cross-cloud pairs
    D, gold = make_two_cloud(n1=10, n2=14, gap=50.0)
    result = consensus_run(D, HC, H=25, p=0.8, k_range=range(2, 5), seed=1)
    cons = result.consensus[2]
    iu = np.triu_indices(D.n, 1)
    entries = cons[iu]
    entries = entries[~np.isnan(entries)]
    assert set(np.unique(entries)).issubset({0.0, 1.0})
    n_pairs = D.n * (D.n - 1) // 2
    cross = 10 * 14 / n_pairs
    assert result.area.value_at(2) == pytest.approx(cross, abs=1e-12)


def test_consensus_cdf_properties():
    rng = np.random.default_rng(7)
    entries = rng.random(200)
    grid, cdf = consensus_cdf(entries)
    assert np.all(np.diff(cdf) >= 0.0)
    assert cdf[-1] == 1.0
    assert 0.0 <= consensus_cdf_area(entries) <= 1.0


def test_consensus_never_cosampled_pair_warns():
    rng = np.random.default_rng(8)
    D = DataMatrix(rng.normal(0, 1, (12, 2)))
    with pytest.warns(RuntimeWarning):
        consensus_run(D, HC, H=1, p=0.6, k_range=range(2, 5), seed=2)


def test_fc_equals_consensus_with_shared_single_round():
    D, _ = make_two_cloud(n1=12, n2=12)
    fc = fc_run(D, HC, H=1, p=0.8, k_range=range(2, 6), seed=4)
    shared = consensus_run(D, HC, H=1, p=0.8, k_range=range(2, 6), seed=4,
                           _share_round_samples=True)
    for k in fc.states:
        assert np.array_equal(fc.states[k].M, shared.states[k].M)
        assert np.array_equal(fc.states[k].I, shared.states[k].I)
    assert np.array_equal(fc.area.values, shared.area.values)
    assert fc.prediction.k_star == shared.prediction.k_star


def test_fc_round_accounting():
    D, _ = make_two_cloud(n1=10, n2=10)
    H, p = 7, 0.8
    result = fc_run(D, HC, H=H, p=p, k_range=range(2, 6), seed=5)
    sample_size = int(np.ceil(p * D.n))
    for k, state in result.states.items():
        # each round contributes exactly one connectivity matrix per k
        assert np.trace(state.I) == H * sample_size
        assert np.array_equal(state.I, result.states[2].I)


def test_consensus_requires_consecutive_range():
    D, _ = make_two_cloud(n1=8, n2=8)
    with pytest.raises(DataError):
        consensus_run(D, HC, H=2, p=0.8, k_range=[2, 4, 6], seed=0)


def test_consensus_to_distance():
    D, gold = make_two_cloud(n1=10, n2=10, gap=50.0)
    result = consensus_run(D, HC, H=10, p=0.8, k_range=range(2, 5), seed=6)
    dist = consensus_to_distance(result, 2)
    assert np.all(np.diag(dist) == 0.0)
    assert np.array_equal(dist, dist.T)
    assert dist.min() >= 0.0
    within = gold.labels[:, None] == gold.labels[None, :]
    assert dist[within].max() == pytest.approx(0.0, abs=1e-12)


def test_consensus_to_distance_all_ones_matrix():
    ones = np.ones((6, 6))
    state = ConsensusState(np.full((6, 6), 5, dtype=np.int64), np.full((6, 6), 5, dtype=np.int64))
    dummy_curve = CurveSeries(np.array([2, 3]), np.array([0.1, 0.2]))
    result = ConsensusResult({2: ones}, {2: state}, dummy_curve, dummy_curve, dummy_curve,
                             Prediction(2, rule="x"))
    assert np.array_equal(consensus_to_distance(result, 2), np.zeros((6, 6)))


def test_run_stability_statistic_smoke():
    from clustval.indices import INDEX_FUNCTIONS
    from clustval.stability import me_wiring, run_stability_statistic

    D, _ = make_two_cloud(n1=10, n2=10)
    cfg = cfg_for(D, H=1)
    S = run_stability_statistic(D, cfg, 2, me_wiring(INDEX_FUNCTIONS["fm"]))
    assert len(S) == 1 and 0.0 <= S[0] <= 1.0
    S3 = run_stability_statistic(D, cfg_for(D, H=3), 3, me_wiring(INDEX_FUNCTIONS["fm"]))
    assert len(S3) == 3


def test_consensus_and_fc_agree_on_simulated6():
    # the six-class generator's weakest-marker class (5 samples) is absorbed
    # by average linkage, so both procedures settle one below the gold count,
    # and they settle identically
    from clustval.data import gen_simulated6

    D, gold = gen_simulated6(0)
    rc = consensus_run(D, HC, H=100, p=0.8, k_range=range(2, 10), seed=0)
    rf = fc_run(D, HC, H=100, p=0.8, k_range=range(2, 10), seed=0)
    assert rc.prediction.k_star == rf.prediction.k_star == gold.class_count - 1
