"""Cluster-number estimation toolkit.

Validation indices, stability-based measures and their fast approximations,
with synthetic generators and a benchmark harness.
"""

from .data import (
    DataMatrix,
    GoldStandard,
    Partition,
    gen_gaussian3,
    gen_gaussian5,
    gen_simulated6,
    load_matrix,
    standardize_rows,
    stirling_partition_count,
)
from .cluster import (
    Dendrogram,
    KMeansInit,
    Linkage,
    build_dendrogram,
    cut_dendrogram,
    euclidean_distances,
    kmeans,
    merge_min_centroid,
)
from .indices import (
    ContingencyTable,
    PairCounts,
    adjusted_rand,
    contingency,
    f_index,
    fm_index,
    pair_counts,
    rand_index,
)
from .datagen import (
    DgpSpec,
    NullModel,
    apply_dgp,
    noise_inject,
    null_permutational,
    null_poisson_box,
    null_poisson_pc,
    null_unimodal,
    random_project,
    subsample,
    stratified_subsample,
)
from .nmf import Factorization, NmfVariant, StopRule, nmf_cluster, nmf_factorize
from .measures import (
    Clusterer,
    CurveSeries,
    HierClusterer,
    KMeansClusterer,
    NmfClusterer,
    Prediction,
    RefreshClusterer,
    clusterer_from_name,
    diff_fom_predict,
    fom_curve,
    fom_r_curve,
    fom_value,
    g_fom_predict,
    g_gap_predict,
    gap_predict,
    kl_predict,
    knee_detect,
    wcss,
    wcss_curve,
    wcss_r_curve,
)
from .stability import (
    ClestResult,
    ConsensusResult,
    ConsensusState,
    MeResult,
    NearestCentroidClassifier,
    StabilityConfig,
    bagclust1,
    bagclust2,
    clest_run,
    consensus_run,
    consensus_to_distance,
    fc_run,
    levine_domany_run,
    max_overlap_matching,
    me_run,
    mecca,
    roth_run,
    run_stability_statistic,
)

__version__ = "0.1.0"
