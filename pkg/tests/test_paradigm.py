"""Equivalence of the direct measure implementations and their wirings.

Every stability measure is expressible as a configuration of the generic
collect-statistics loop; these tests run each measure both ways under shared
seeds and require bitwise-identical outputs.
"""

import numpy as np
import pytest

from clustval.datagen import NullModel
from clustval.measures import HierClusterer, KMeansClusterer, gap_predict
from clustval.stability import (
    StabilityConfig,
    bagclust1,
    bagclust2,
    clest_run,
    consensus_run,
    levine_domany_run,
    me_run,
    paradigm_bagclust1,
    paradigm_bagclust2,
    paradigm_clest_run,
    paradigm_consensus_run,
    paradigm_gap_predict,
    paradigm_levine_domany_run,
    paradigm_me_run,
    paradigm_roth_run,
    roth_run,
)

from conftest import make_two_cloud

D30, GOLD30 = make_two_cloud(seed=17, n1=14, n2=16, gap=6.0, m=4)
HC = HierClusterer()
KM = KMeansClusterer(niter=30)


def config(clusterer, H=6, seed=29, **kw):
    return StabilityConfig(k_min=2, k_max=5, H=H, clusterers=(clusterer,),
                           external_index="fm", seed=seed, **kw)


@pytest.mark.parametrize("clusterer", [HC, KM], ids=["hier-a", "kmeans-r"])
def test_me_equivalence(clusterer):
    cfg = config(clusterer)
    native = me_run(D30, cfg)
    wired = paradigm_me_run(D30, cfg)
    for k in native.values:
        assert np.array_equal(native.values[k], wired.values[k])
    assert native.prediction.k_star == wired.prediction.k_star


@pytest.mark.parametrize("clusterer", [HC, KM], ids=["hier-a", "kmeans-r"])
def test_clest_equivalence(clusterer):
    cfg = config(clusterer, H=4)
    native = clest_run(D30, cfg, B0=3)
    wired = paradigm_clest_run(D30, cfg, B0=3)
    assert native.t == wired.t
    assert native.t_null == wired.t_null
    assert native.p == wired.p
    assert native.d == wired.d
    assert native.significant == wired.significant
    assert native.prediction.k_star == wired.prediction.k_star


@pytest.mark.parametrize("clusterer", [HC, KM], ids=["hier-a", "kmeans-r"])
def test_consensus_equivalence(clusterer):
    native = consensus_run(D30, clusterer, H=6, p=0.8, k_range=range(2, 6), seed=31)
    wired = paradigm_consensus_run(D30, clusterer, H=6, p=0.8, k_range=range(2, 6), seed=31)
    for k in native.states:
        assert np.array_equal(native.states[k].M, wired.states[k].M)
        assert np.array_equal(native.states[k].I, wired.states[k].I)
    assert np.array_equal(native.area.values, wired.area.values)
    assert np.array_equal(native.delta.values, wired.delta.values)
    assert native.prediction.k_star == wired.prediction.k_star


@pytest.mark.parametrize("clusterer", [HC, KM], ids=["hier-a", "kmeans-r"])
def test_levine_domany_equivalence(clusterer):
    cfg = config(clusterer)
    native_curve, native_pred = levine_domany_run(D30, cfg)
    wired_curve, wired_pred = paradigm_levine_domany_run(D30, cfg)
    assert np.array_equal(native_curve.values, wired_curve.values)
    assert native_pred.k_star == wired_pred.k_star


@pytest.mark.parametrize("clusterer", [HC, KM], ids=["hier-a", "kmeans-r"])
def test_roth_equivalence(clusterer):
    cfg = config(clusterer, H=5)
    native_curve, native_pred = roth_run(D30, cfg)
    wired_curve, wired_pred = paradigm_roth_run(D30, cfg)
    assert np.array_equal(native_curve.values, wired_curve.values)
    assert native_pred.k_star == wired_pred.k_star


@pytest.mark.parametrize("clusterer", [HC, KM], ids=["hier-a", "kmeans-r"])
def test_bagclust1_equivalence(clusterer):
    native = bagclust1(D30, clusterer, 3, 6, seed=37)
    wired = paradigm_bagclust1(D30, clusterer, 3, 6, seed=37)
    assert np.array_equal(native.assignment, wired.assignment)


@pytest.mark.parametrize("clusterer", [HC, KM], ids=["hier-a", "kmeans-r"])
def test_bagclust2_equivalence(clusterer):
    native_diss, native_p = bagclust2(D30, clusterer, 3, 6, beta=0.8, seed=41)
    wired_diss, wired_p = paradigm_bagclust2(D30, clusterer, 3, 6, beta=0.8, seed=41)
    assert np.array_equal(native_diss, wired_diss)
    assert np.array_equal(native_p.assignment, wired_p.assignment)


@pytest.mark.parametrize("clusterer", [HC, KM], ids=["hier-a", "kmeans-r"])
def test_gap_equivalence(clusterer):
    native = gap_predict(D30, clusterer, NullModel.POISSON_BOX, l=3, steps=3, k_max=5, seed=43)
    wired = paradigm_gap_predict(D30, clusterer, NullModel.POISSON_BOX, l=3, steps=3, k_max=5, seed=43)
    assert native.details["step_predictions"] == wired.details["step_predictions"]
    assert native.k_star == wired.k_star
