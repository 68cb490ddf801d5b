"""Density-clustering machinery: core distances through soft memberships."""

import math

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from conceptalign import (
    CondensedTree,
    SoftClustering,
    ValidationError,
    build_condensed_tree,
    cba,
    core_distances,
    discover_concepts,
    exemplars,
    extract_leaf_clusters,
    gaussian_blobs,
    knn_graph,
    minimum_spanning_tree,
    mutual_reachability,
    neighbor_embed,
    soft_memberships,
)
from conceptalign.data import save_clustering
from conftest import adjusted_rand, prim_reference

LINE_POINTS = np.array([[0.0], [1.0], [3.0]])


class TestCoreDistances:
    def test_first_neighbor(self):
        g = knn_graph(LINE_POINTS, 2)
        np.testing.assert_allclose(core_distances(g, 1), [1.0, 1.0, 2.0])

    def test_second_neighbor(self):
        g = knn_graph(LINE_POINTS, 2)
        np.testing.assert_allclose(core_distances(g, 2), [3.0, 2.0, 3.0])

    def test_duplicates_have_zero_core(self):
        pts = np.array([[1.0], [1.0], [5.0]])
        g = knn_graph(pts, 1)
        core = core_distances(g, 1)
        assert core[0] == core[1] == 0.0

    def test_k_beyond_degree(self):
        g = knn_graph(LINE_POINTS, 1)
        with pytest.raises(ValidationError):
            core_distances(g, 2)


class TestMutualReachability:
    def test_hand_case(self):
        d = cdist(LINE_POINTS, LINE_POINTS)
        core = core_distances(knn_graph(LINE_POINTS, 2), 2)
        mrd = mutual_reachability(d, core)
        assert mrd[0, 1] == 3.0  # max(3, 2, 1)
        assert mrd[0, 2] == mrd[2, 0]

    def test_distance_dominates_when_larger(self, rng):
        pts = rng.normal(size=(20, 3)) * 10
        d = cdist(pts, pts)
        core = core_distances(knn_graph(pts, 1), 1)
        mrd = mutual_reachability(d, core)
        far = d > np.maximum(core[:, None], core[None, :])
        np.testing.assert_array_equal(mrd[far], d[far])

    def test_identical_points(self):
        pts = np.zeros((4, 2))
        d = cdist(pts, pts)
        core = np.zeros(4)
        assert mutual_reachability(d, core).max() == 0.0

    def test_size_mismatch(self):
        with pytest.raises(ValidationError):
            mutual_reachability(np.zeros((3, 3)), np.zeros(4))


class TestMinimumSpanningTree:
    def test_triangle(self):
        w = np.array([[0.0, 1.0, 3.0], [1.0, 0.0, 2.0], [3.0, 2.0, 0.0]])
        edges = minimum_spanning_tree(w)
        assert sorted(edges[:, 2]) == [1.0, 2.0]

    def test_path_metric_recovers_path(self):
        xs = np.array([0.0, 1.0, 2.5, 5.0])
        w = np.abs(xs[:, None] - xs[None, :])
        edges = minimum_spanning_tree(w)
        got = {(int(u), int(v)) for u, v, _ in edges}
        assert got == {(0, 1), (1, 2), (2, 3)}

    def test_matches_prim_oracle_exactly(self, rng):
        for _ in range(5):
            pts = rng.normal(size=(200, 4))
            d = cdist(pts, pts)
            core = core_distances(knn_graph(pts, 5), 5)
            mrd = mutual_reachability(d, core)
            mine = math.fsum(minimum_spanning_tree(mrd)[:, 2].tolist())
            oracle = math.fsum(prim_reference(mrd))
            assert mine == oracle

    def test_single_point_rejected(self):
        with pytest.raises(ValidationError):
            minimum_spanning_tree(np.zeros((1, 1)))


def _blob_tree(n_blobs=2, n_points=120, mcs=50, seed=4):
    fm = gaussian_blobs(n_points, n_blobs, dim=5, separation=25.0, seed=seed)
    pts = fm.data.astype(np.float64)
    g = knn_graph(pts, 20)
    mrd = mutual_reachability(cdist(pts, pts), core_distances(g, 20))
    tree = build_condensed_tree(minimum_spanning_tree(mrd), mcs, n_points=n_points)
    return fm, pts, tree


class TestCondensedTree:
    def test_two_blobs_two_leaves(self):
        _, _, tree = _blob_tree()
        assert tree.leaf_ids().size == 2

    def test_single_leaf_when_min_size_huge(self, rng):
        pts = rng.random((100, 3))
        mrd = mutual_reachability(cdist(pts, pts),
                                  core_distances(knn_graph(pts, 10), 10))
        tree = build_condensed_tree(minimum_spanning_tree(mrd), 99, n_points=100)
        assert tree.leaf_ids().size == 1
        assert tree.n_clusters == 1  # nothing ever split off the root

    def test_small_blob_never_splits(self, rng):
        pts = rng.normal(size=(40, 3))
        mrd = mutual_reachability(cdist(pts, pts),
                                  core_distances(knn_graph(pts, 10), 10))
        tree = build_condensed_tree(minimum_spanning_tree(mrd), 50, n_points=40)
        assert tree.n_clusters == 1

    def test_structure_invariants(self):
        _, _, tree = _blob_tree()
        tree.validate()
        # each point recorded exactly once and on a real cluster
        assert (tree.point_cluster >= 0).all()
        assert (tree.point_lambda >= 0).all()

    def test_min_cluster_size_validated(self):
        with pytest.raises(ValidationError):
            build_condensed_tree(np.array([[0, 1, 1.0]]), 1, n_points=2)


class TestExtractLeafClusters:
    def test_two_blob_labels_match_generator(self):
        fm, _, tree = _blob_tree()
        clustering = extract_leaf_clusters(tree)
        mask = clustering.hard_labels >= 0
        assert adjusted_rand(fm.meta.class_labels[mask],
                             clustering.hard_labels[mask]) == 1.0

    def test_noise_rate_arithmetic(self):
        c = SoftClustering(
            np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]),
            np.array([-1, 0, 1, -1]),
            np.array([1.0, 1.0]),
        )
        assert c.noise_rate == 0.5

    def test_empty_clustering_flagged_downstream(self):
        c = SoftClustering(np.zeros((3, 0)), np.array([-1, -1, -1]), np.zeros(0))
        assert c.noise_rate == 1.0
        assert c.concept_count == 0
        with pytest.raises(ValidationError, match="no concepts"):
            cba(c, c)


class TestExemplars:
    def test_unique_densest_point(self):
        tree = CondensedTree(
            n_points=3,
            parent=np.array([-1]),
            lambda_birth=np.array([0.1]),
            lambda_max=np.array([3.0]),
            size=np.array([3]),
            point_cluster=np.array([0, 0, 0]),
            point_lambda=np.array([3.0, 1.0, 0.5]),
        )
        ex = exemplars(tree)
        np.testing.assert_array_equal(ex.indices[0], [0])

    def test_tied_peak_keeps_both(self):
        tree = CondensedTree(
            n_points=4,
            parent=np.array([-1]),
            lambda_birth=np.array([0.5]),
            lambda_max=np.array([2.0]),
            size=np.array([4]),
            point_cluster=np.array([0, 0, 0, 0]),
            point_lambda=np.array([2.0, 2.0, 1.0, 0.6]),
        )
        ex = exemplars(tree)
        np.testing.assert_array_equal(ex.indices[0], [0, 1])

    def test_exemplar_lambda_equals_leaf_max(self):
        _, _, tree = _blob_tree()
        ex = exemplars(tree)
        for leaf, idx in zip(ex.leaf_ids, ex.indices):
            assert tree.point_lambda[idx].max() == pytest.approx(tree.lambda_max[leaf])


def _mirror_tree():
    # two congruent clusters with identical persistence profiles
    tree = CondensedTree(
        n_points=5,
        parent=np.array([-1, 0, 0]),
        lambda_birth=np.array([0.2, 1.0, 1.0]),
        lambda_max=np.array([2.0, 2.0, 2.0]),
        size=np.array([5, 2, 2]),
        point_cluster=np.array([1, 1, 2, 2, 0]),
        point_lambda=np.array([2.0, 1.5, 2.0, 1.5, 0.3]),
    )
    coords = np.array([[-1.0, 0.0], [-1.5, 0.0], [1.0, 0.0], [1.5, 0.0], [0.0, 0.0]])
    return tree, coords


class TestSoftMemberships:
    def test_exemplar_attains_argmax(self):
        fm, pts, tree = _blob_tree()
        ex = exemplars(tree)
        c = soft_memberships(tree, ex, pts)
        for a, idx in enumerate(ex.indices):
            assert (c.memberships[idx].argmax(axis=1) == a).all()

    def test_symmetric_point_scores_equally(self):
        tree, coords = _mirror_tree()
        c = soft_memberships(tree, exemplars(tree), coords)
        assert c.memberships[4, 0] == pytest.approx(c.memberships[4, 1], abs=1e-12)

    def test_blob_argmax_matches_hard_labels(self):
        fm, pts, tree = _blob_tree()
        c = soft_memberships(tree, exemplars(tree), pts)
        mask = c.hard_labels >= 0
        assert (c.memberships[mask].argmax(axis=1) == c.hard_labels[mask]).all()

    def test_row_sums_and_range(self):
        _, pts, tree = _blob_tree(n_blobs=3, n_points=180)
        c = soft_memberships(tree, exemplars(tree), pts)
        assert c.memberships.min() >= 0.0
        assert c.memberships.max() <= 1.0
        assert c.memberships.sum(axis=1).max() <= 1.0 + 1e-6

    def test_degenerate_plateau_is_crisp(self):
        tree = CondensedTree(
            n_points=4,
            parent=np.array([-1, 0, 0]),
            lambda_birth=np.array([0.2, 2.0, 1.0]),
            lambda_max=np.array([2.0, 2.0, 2.0]),
            size=np.array([4, 2, 2]),
            point_cluster=np.array([1, 1, 2, 2]),
            point_lambda=np.array([2.0, 2.0, 2.0, 1.5]),
        )
        coords = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 0.0], [5.1, 0.0]])
        c = soft_memberships(tree, exemplars(tree), coords)
        # cluster 0 has zero persistence width: only members may score on it
        assert c.memberships[2, 0] == 0.0
        assert c.memberships[3, 0] == 0.0
        assert c.memberships[0, 0] > 0.0

    def test_hard_soft_consistency_above_median(self):
        fm, pts, tree = _blob_tree(n_blobs=3, n_points=240, seed=9)
        c = soft_memberships(tree, exemplars(tree), pts)
        argmax = c.memberships.argmax(axis=1)
        for a in range(c.concept_count):
            members = np.flatnonzero(c.hard_labels == a)
            lam = tree.point_lambda[members]
            core = members[lam >= np.median(lam)]
            assert (argmax[core] == a).all()


class TestDiscoveryDeterminism:
    def test_identical_seeds_identical_bytes(self, three_blobs, tmp_path):
        emb = neighbor_embed(three_blobs, 5, n_neighbors=30, epochs=100, seed=2)
        runs = []
        for tag in ("a", "b"):
            disc = discover_concepts(emb, min_cluster_size=50, min_samples=20, seed=7)
            save_clustering(disc.clustering, tmp_path / tag, params=disc.params)
            runs.append((tmp_path / tag / "memberships.bin").read_bytes()
                        + (tmp_path / tag / "hard_labels.bin").read_bytes()
                        + (tmp_path / tag / "clustering.json").read_bytes())
        assert runs[0] == runs[1]
