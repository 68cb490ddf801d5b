"""Cross-layer and cross-model concept analyses.

Covers the flow of tokens between concepts of consecutive layers (concept
formation graphs), minimum-cost matching of concepts between two
clusterings, the 2-D concept atlas built from pairwise concept distances,
and category assignment by majority vote.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import stage_rng
from .embed import neighbor_embed
from .errors import ValidationError


def assign_tokens(clustering, threshold):
    """Concepts each token belongs to: every concept scoring >= threshold.

    Returns one integer array per token; an empty array marks noise.
    """
    if not 0.0 < threshold < 1.0:
        raise ValidationError("assignment threshold must lie in (0, 1)")
    mat = getattr(clustering, "memberships", clustering)
    return [np.flatnonzero(row >= threshold) for row in np.asarray(mat)]


def transition_matrix(assign_a, assign_b, k_a=None, k_b=None):
    """Token-transition counts between the concepts of two consecutive layers.

    Entry (a, b) counts tokens assigned to concept a in the first layer and
    concept b in the second; a token with multiple memberships contributes
    one count to each of its (a, b) combinations.
    """
    if len(assign_a) != len(assign_b):
        raise ValidationError("assignments must cover the same token ids")
    if k_a is None:
        k_a = max((int(ids.max()) for ids in assign_a if ids.size), default=-1) + 1
    if k_b is None:
        k_b = max((int(ids.max()) for ids in assign_b if ids.size), default=-1) + 1
    counts = np.zeros((k_a, k_b), dtype=np.int64)
    for ids_a, ids_b in zip(assign_a, assign_b):
        if ids_a.size and ids_b.size:
            counts[np.ix_(ids_a, ids_b)] += 1
    return counts


@dataclass
class ConceptGraph:
    """Directed graph of concept nodes across consecutive layers."""

    nodes: list  # (layer, concept) pairs, layers 1-based
    edges: list  # ((layer, concept), (layer + 1, concept)) pairs
    assignment_threshold: float = 0.5
    contribution_threshold: float = 0.1

    def validate(self):
        node_set = set(self.nodes)
        for src, dst in self.edges:
            if src not in node_set or dst not in node_set:
                raise ValidationError("graph edge references a missing node")
            if dst[0] != src[0] + 1:
                raise ValidationError("edges must connect consecutive layers")

    def to_json(self):
        self.validate()
        return {
            "schema_version": 1,
            "kind": "concept_graph",
            "nodes": [{"layer": int(l), "concept": int(c)} for l, c in self.nodes],
            "edges": [
                {
                    "from": {"layer": int(s[0]), "concept": int(s[1])},
                    "to": {"layer": int(d[0]), "concept": int(d[1])},
                }
                for s, d in self.edges
            ],
            "assignment_threshold": self.assignment_threshold,
            "contribution_threshold": self.contribution_threshold,
        }


def build_cfg(target, transitions, contribution_threshold=0.1,
              assignment_threshold=0.5):
    """Trace a concept's formation backwards through the layer transitions.

    ``target`` is a (layer, concept) pair with 1-based layers and
    ``transitions[l - 1]`` holds the counts from layer l to layer l + 1.
    A predecessor is added when its share of the target's incoming
    transitions reaches ``contribution_threshold``; construction recurses
    on every added node.
    """
    layer, concept = target
    if not 1 <= layer <= len(transitions) + 1:
        raise ValidationError(f"target layer {layer} outside the transition range")
    k_target = transitions[layer - 2].shape[1] if layer >= 2 else None
    if k_target is not None and not 0 <= concept < k_target:
        raise ValidationError(f"target concept {concept} out of range")

    nodes = {(layer, concept)}
    edges = []
    stack = [(layer, concept)]
    while stack:
        l, c = stack.pop()
        if l == 1:
            continue
        counts = transitions[l - 2][:, c].astype(np.float64)
        total = counts.sum()
        if total == 0:
            continue
        for pred in np.flatnonzero(counts / total >= contribution_threshold):
            node = (l - 1, int(pred))
            edges.append((node, (l, c)))
            if node not in nodes:
                nodes.add(node)
                stack.append(node)
    graph = ConceptGraph(sorted(nodes), sorted(edges), assignment_threshold,
                         contribution_threshold)
    graph.validate()
    return graph


def _assignment_cost(cost, pairs):
    return float(sum(cost[a, b] for a, b in pairs))


def hungarian_match(cost):
    """Minimum-cost matching of min(k_P, k_Q) concept pairs.

    Surplus concepts of the larger side stay unmatched. Among equally cheap
    assignments the lexicographically smallest pair list wins, checked row
    by row against the optimal total.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        raise ValidationError("cost matrix is empty")
    if not np.isfinite(cost).all():
        raise ValidationError("cost matrix must be finite")
    transposed = cost.shape[0] > cost.shape[1]
    work = cost.T if transposed else cost
    rows, cols = work.shape

    ind = linear_sum_assignment(work)
    optimum = work[ind].sum()
    tol = 1e-9 * max(1.0, abs(optimum))

    fixed = []
    available = list(range(cols))
    fixed_cost = 0.0
    for row in range(rows):
        for col in available:
            remaining_rows = np.arange(row + 1, rows)
            remaining_cols = [c for c in available if c != col]
            sub = work[np.ix_(remaining_rows, remaining_cols)]
            rest = sub[linear_sum_assignment(sub)].sum() if sub.size else 0.0
            if fixed_cost + work[row, col] + rest <= optimum + tol:
                fixed.append((row, col))
                fixed_cost += work[row, col]
                available.remove(col)
                break
        else:
            raise ValidationError("no consistent assignment found")  # pragma: no cover
    if transposed:
        fixed = sorted((b, a) for a, b in fixed)
    return fixed


@dataclass
class ConceptAtlas:
    """2-D map of one clustering's concepts with categories and examples."""

    coords: np.ndarray  # (k, 2)
    categories: list  # per concept, a string or None
    representatives: list = field(default_factory=list)  # per concept, member indices

    def to_csv_rows(self):
        rows = [("concept", "x", "y", "category")]
        for i, (x, y) in enumerate(self.coords):
            cat = self.categories[i] if self.categories else ""
            rows.append((str(i), repr(float(x)), repr(float(y)), cat or ""))
        return rows


def concept_atlas(pair_matrix, categories=None, member_indices=None, seed=0,
                  n_neighbors=15, epochs=200):
    """Embed the concept-pair distance matrix into two dimensions.

    ``member_indices`` is the per-concept list of member point ids; four of
    them per concept are sampled (seeded) as representatives.
    """
    d = np.asarray(pair_matrix, dtype=np.float64)
    k = d.shape[0]
    if d.shape != (k, k):
        raise ValidationError("concept distance matrix must be square")
    if k < 4:
        raise ValidationError("too few concepts to build an atlas (need >= 4)")
    if (d < 0).any():
        raise ValidationError("concept distances must be non-negative")
    if not np.allclose(d, d.T, atol=1e-9):
        raise ValidationError("concept distance matrix must be symmetric")
    if categories is not None and len(categories) != k:
        raise ValidationError("need one category per concept")

    emb = neighbor_embed(d, 2, n_neighbors=min(n_neighbors, k - 1), epochs=epochs,
                         seed=seed, metric="precomputed")
    reps = []
    if member_indices is not None:
        rng = stage_rng(seed, "atlas-representatives")
        for members in member_indices:
            members = np.asarray(members)
            take = min(4, members.size)
            reps.append(np.sort(rng.choice(members, size=take, replace=False)))
    return ConceptAtlas(emb.points, list(categories) if categories is not None else None, reps)


def majority_category(member_labels):
    """Most frequent label; ties go to the lexicographically smallest."""
    labels = list(member_labels)
    if not labels:
        raise ValidationError("cannot vote over an empty member list")
    counts = Counter(labels)
    return min(counts, key=lambda label: (-counts[label], label))


def concept_categories(hard_labels, point_categories):
    """Majority-vote category per concept from its members' categories."""
    hard_labels = np.asarray(hard_labels)
    k = int(hard_labels.max()) + 1 if (hard_labels >= 0).any() else 0
    out = []
    for c in range(k):
        members = np.flatnonzero(hard_labels == c)
        out.append(majority_category([point_categories[i] for i in members])
                   if members.size else None)
    return out
