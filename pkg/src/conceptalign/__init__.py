"""Concept discovery in hidden representations and concept-based alignment.

The package finds "concepts" -- nonlinear manifolds in a representation's
feature space -- via density clustering on a neighbor embedding, scores
every feature vector's proximity to every concept, and compares
representations through a fuzzy generalization of the Rand index that can
be decomposed into per-concept-pair distances.
"""

from .align import (
    AlignmentReport,
    cba,
    concept_pair_distance,
    concept_pair_matrix,
    crisp_to_membership,
    cross_clustering_distance,
    membership_distance,
    robustness,
)
from .analysis import (
    ConceptAtlas,
    ConceptGraph,
    assign_tokens,
    build_cfg,
    concept_atlas,
    hungarian_match,
    majority_category,
    transition_matrix,
)
from .baselines import SanityResult, kmeans_concepts, pca_concepts, sanity_check
from .cluster import (
    CondensedTree,
    ConceptDiscovery,
    ExemplarSet,
    build_condensed_tree,
    core_distances,
    discover_concepts,
    exemplars,
    extract_leaf_clusters,
    minimum_spanning_tree,
    mutual_reachability,
    soft_memberships,
)
from .data import (
    FeatureMatrix,
    RowMeta,
    RunManifest,
    SoftClustering,
    SourceInfo,
    load_clustering,
    load_feature_matrix,
    save_clustering,
    save_feature_matrix,
    subsample,
)
from .embed import (
    Embedding,
    NeighborGraph,
    distance_fidelity_rmse,
    knn_graph,
    neighbor_embed,
    pca_reduce,
)
from .errors import StageFailure, ValidationError
from .synth import gaussian_blobs, generate_synthetic, layer_chain, line_segment, ring_manifold
from .validity import ValidityReport, dbcv, twonn_id, validity_report

__version__ = "0.1.0"
