"""Concept formation graphs, matching, atlas, and category votes."""

import itertools

import numpy as np
import pytest

from conceptalign import (
    SoftClustering,
    ValidationError,
    assign_tokens,
    build_cfg,
    concept_atlas,
    concept_pair_matrix,
    crisp_to_membership,
    hungarian_match,
    majority_category,
    transition_matrix,
)
from conceptalign.analysis import concept_categories
from conftest import adjusted_rand


class TestAssignTokens:
    def test_threshold_examples(self):
        c = np.array([[0.6, 0.3], [0.2, 0.1]])
        out = assign_tokens(c, 0.5)
        np.testing.assert_array_equal(out[0], [0])
        assert out[1].size == 0  # noise

    def test_low_threshold_keeps_both(self):
        out = assign_tokens(np.array([[0.1, 0.1]]), 0.05)
        np.testing.assert_array_equal(out[0], [0, 1])

    def test_high_threshold_keeps_near_certain(self):
        out = assign_tokens(np.array([[0.995, 0.0], [0.9, 0.05]]), 0.99)
        np.testing.assert_array_equal(out[0], [0])
        assert out[1].size == 0

    def test_threshold_validated(self):
        with pytest.raises(ValidationError):
            assign_tokens(np.ones((1, 1)), 1.5)


class TestTransitionMatrix:
    def test_single_flow(self):
        a = [np.array([0])] * 10
        b = [np.array([0])] * 10
        m = transition_matrix(a, b)
        assert m.shape == (1, 1) and m[0, 0] == 10

    def test_disjoint_assignments_zero(self):
        a = [np.array([0]), np.array([], dtype=int)]
        b = [np.array([], dtype=int), np.array([1])]
        m = transition_matrix(a, b, 1, 2)
        assert m.sum() == 0

    def test_hand_enumeration_with_multimembership(self):
        a = [np.array([0]), np.array([0, 1]), np.array([1]), np.array([], dtype=int),
             np.array([0])]
        b = [np.array([1]), np.array([0]), np.array([0, 1]), np.array([0]),
             np.array([], dtype=int)]
        m = transition_matrix(a, b, 2, 2)
        expected = np.zeros((2, 2), dtype=int)
        for ids_a, ids_b in zip(a, b):
            for x in ids_a:
                for y in ids_b:
                    expected[x, y] += 1
        np.testing.assert_array_equal(m, expected)

    def test_conservation(self, rng):
        a = [rng.permutation(3)[: rng.integers(0, 3)] for _ in range(50)]
        b = [rng.permutation(4)[: rng.integers(1, 4)] for _ in range(50)]
        m = transition_matrix(a, b, 3, 4)
        outgoing = m.sum(axis=1)
        expected = np.zeros(3, dtype=int)
        for ids_a, ids_b in zip(a, b):
            for x in ids_a:
                expected[x] += len(ids_b)
        np.testing.assert_array_equal(outgoing, expected)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            transition_matrix([np.array([0])], [])


class TestBuildCfg:
    def test_contribution_threshold_filters(self):
        # two predecessors contributing 0.8 / 0.2 at threshold 0.3
        t = [np.array([[8, 0], [2, 0]])]
        g = build_cfg((2, 0), t, contribution_threshold=0.3)
        assert ((1, 0), (2, 0)) in g.edges
        assert ((1, 1), (2, 0)) not in g.edges

    def test_tiny_threshold_keeps_all_contributors(self):
        t = [np.array([[8, 0], [2, 0]])]
        g = build_cfg((2, 0), t, contribution_threshold=1e-9)
        assert len(g.edges) == 2

    def test_layer_one_target_is_single_node(self):
        t = [np.array([[1]])]
        g = build_cfg((1, 0), t)
        assert g.nodes == [(1, 0)] and g.edges == []

    def test_recursive_construction(self):
        t01 = np.array([[5, 0], [0, 5]])
        t12 = np.array([[7, 0], [3, 0]])
        g = build_cfg((3, 0), [t01, t12], contribution_threshold=0.2)
        assert ((2, 0), (3, 0)) in g.edges
        assert ((2, 1), (3, 0)) in g.edges
        assert ((1, 0), (2, 0)) in g.edges
        assert ((1, 1), (2, 1)) in g.edges

    def test_relabeling_is_graph_isomorphism(self, rng):
        t = [rng.integers(0, 10, size=(3, 3)), rng.integers(0, 10, size=(3, 3))]
        g = build_cfg((3, 1), t, contribution_threshold=0.25)
        perm = np.array([2, 0, 1])  # relabel layer-2 concepts
        t_perm = [t[0][:, perm], t[1][perm, :]]
        g2 = build_cfg((3, 1), t_perm, contribution_threshold=0.25)
        nodes2 = sorted((l, int(perm[c]) if l == 2 else c) for l, c in g2.nodes)
        assert nodes2 == g.nodes

    def test_out_of_range_target(self):
        with pytest.raises(ValidationError):
            build_cfg((2, 5), [np.array([[1]])])
        with pytest.raises(ValidationError):
            build_cfg((7, 0), [np.array([[1]])])

    def test_json_round_shape(self):
        g = build_cfg((2, 0), [np.array([[3, 1], [3, 1]])], contribution_threshold=0.4)
        doc = g.to_json()
        assert doc["kind"] == "concept_graph"
        assert all(e["to"]["layer"] == e["from"]["layer"] + 1 for e in doc["edges"])


class TestHungarianMatch:
    def test_two_by_two(self):
        assert hungarian_match([[1.0, 2.0], [2.0, 1.0]]) == [(0, 0), (1, 1)]

    def test_zero_diagonal(self):
        cost = np.ones((3, 3)) - np.eye(3)
        assert hungarian_match(cost) == [(0, 0), (1, 1), (2, 2)]

    def test_all_equal_costs_lexicographic(self):
        assert hungarian_match(np.zeros((3, 3))) == [(0, 0), (1, 1), (2, 2)]

    def test_matches_exhaustive_search(self, rng):
        for _ in range(20):
            cost = rng.random((6, 6))
            best = min(itertools.permutations(range(6)),
                       key=lambda p: sum(cost[i, p[i]] for i in range(6)))
            assert hungarian_match(cost) == [(i, best[i]) for i in range(6)]

    def test_rectangular_leaves_surplus_unmatched(self, rng):
        cost = rng.random((3, 5))
        pairs = hungarian_match(cost)
        assert len(pairs) == 3
        assert len({b for _, b in pairs}) == 3

    def test_never_worse_than_identity(self, rng):
        for _ in range(10):
            cost = rng.random((5, 5))
            pairs = hungarian_match(cost)
            total = sum(cost[a, b] for a, b in pairs)
            assert total <= np.trace(cost) + 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            hungarian_match(np.zeros((0, 0)))


def _block_distance_matrix(rng, k=8):
    # two tight groups of concepts far apart
    d = rng.random((k, k)) * 0.05
    d = (d + d.T) / 2
    half = k // 2
    d[:half, half:] += 1.0
    d[half:, :half] += 1.0
    np.fill_diagonal(d, 0.0)
    return d


class TestConceptAtlas:
    def test_coordinate_count(self, rng):
        d = _block_distance_matrix(rng)
        atlas = concept_atlas(d, seed=0)
        assert atlas.coords.shape == (8, 2)

    def test_zero_distance_pair_is_adjacent(self, rng):
        d = _block_distance_matrix(rng)
        d[0, 1] = d[1, 0] = 0.0
        atlas = concept_atlas(d, seed=0)
        from scipy.spatial.distance import pdist

        pair = np.linalg.norm(atlas.coords[0] - atlas.coords[1])
        assert pair <= np.quantile(pdist(atlas.coords), 0.10)

    def test_block_structure_recovered(self, rng):
        from conceptalign import kmeans_concepts

        d = _block_distance_matrix(rng, k=12)
        atlas = concept_atlas(d, seed=1)
        grouping = kmeans_concepts(atlas.coords, 2, seed=0).hard_labels
        truth = np.array([0] * 6 + [1] * 6)
        assert adjusted_rand(truth, grouping) >= 0.9

    def test_representatives_sampled(self, rng):
        d = _block_distance_matrix(rng, k=4)
        members = [np.arange(10) + 10 * c for c in range(4)]
        atlas = concept_atlas(d, member_indices=members, seed=0)
        for c, reps in enumerate(atlas.representatives):
            assert reps.size == 4
            assert np.isin(reps, members[c]).all()

    def test_too_few_concepts(self):
        with pytest.raises(ValidationError):
            concept_atlas(np.zeros((3, 3)))

    def test_asymmetric_rejected(self, rng):
        d = rng.random((5, 5))
        with pytest.raises(ValidationError):
            concept_atlas(d)

    def test_intra_model_pair_matrix_feeds_atlas(self, rng):
        labels = rng.integers(0, 6, 80)
        P = crisp_to_membership(labels)
        pm = concept_pair_matrix(P, P, check_upper_bound=False)
        atlas = concept_atlas(pm, seed=2)
        assert atlas.coords.shape == (6, 2)


class TestMajorityCategory:
    def test_plain_majority(self):
        assert majority_category(["dog", "dog", "cat"]) == "dog"

    def test_tie_lexicographic(self):
        assert majority_category(["b", "a"]) == "a"

    def test_single(self):
        assert majority_category(["zebra"]) == "zebra"

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            majority_category([])

    def test_per_concept_votes(self):
        hard = np.array([0, 0, 1, 1, 1, -1])
        cats = ["dog", "cat", "cat", "cat", "bird", "dog"]
        assert concept_categories(hard, cats) == ["cat", "cat"]
