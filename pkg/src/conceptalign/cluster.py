"""Hierarchical density clustering with probabilistic memberships.

The pipeline: core distances from the k-nearest-neighbor graph, the
mutual-reachability metric, its minimum spanning tree, a single-linkage
hierarchy condensed by a minimum cluster size, leaf clusters as concepts,
and per-point concept proximity scores that blend an exemplar-distance
membership with an outlier (persistence) membership.

Persistence values are lambda = 1 / mutual-reachability-distance: a cluster
is born when it splits off its parent and points "fall out" of it one by one
as lambda grows. Leaf points with maximal persistence are the cluster's
exemplars, anchoring distance-based membership for arbitrary (non-convex)
cluster shapes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .data import SoftClustering
from .errors import ValidationError

EXEMPLAR_REL_TOL = 1e-9
DIST_EPS = 1e-12
# Zero-distance merges (duplicate points) would give infinite persistence;
# capping keeps membership arithmetic finite.
MIN_MERGE_DIST = 1e-12


def _coords(x):
    return np.ascontiguousarray(getattr(x, "points", getattr(x, "data", x)), dtype=np.float64)


def core_distances(graph, k):
    """Distance from each point to its k-th nearest neighbor (self excluded)."""
    if k < 1 or k > graph.k:
        raise ValidationError(f"k={k} exceeds the neighbor graph degree {graph.k}")
    return graph.distances[:, k - 1].copy()


def mutual_reachability(dist, core):
    """max(core_i, core_j, d_ij) for all pairs; the diagonal holds core_i."""
    dist = np.asarray(dist, dtype=np.float64)
    core = np.asarray(core, dtype=np.float64)
    if dist.shape != (core.size, core.size):
        raise ValidationError("distance matrix and core distances disagree in size")
    mrd = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(mrd, core)
    return mrd


def minimum_spanning_tree(weights):
    """MST edges of a dense symmetric weight matrix via Prim's algorithm.

    Returns an (n-1, 3) array of ``(u, v, weight)`` rows in insertion order
    with ``u < v``. Ties are resolved toward the smaller-index endpoints, so
    the edge list is a pure function of the input.
    """
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    if n < 2:
        raise ValidationError("minimum spanning tree needs at least two points")
    if not np.isfinite(w).all():
        raise ValidationError("weights must be finite")
    in_tree = np.zeros(n, dtype=bool)
    best = w[0].copy()
    best_from = np.zeros(n, dtype=np.intp)
    in_tree[0] = True
    best[0] = np.inf
    edges = np.empty((n - 1, 3), dtype=np.float64)
    for step in range(n - 1):
        nxt = int(np.argmin(best))  # argmin takes the first minimum: lowest index wins ties
        u = int(best_from[nxt])
        edges[step] = (min(u, nxt), max(u, nxt), best[nxt])
        in_tree[nxt] = True
        best[nxt] = np.inf
        improve = (w[nxt] < best) & ~in_tree
        best[improve] = w[nxt][improve]
        best_from[improve] = nxt
    return edges


@dataclass
class CondensedTree:
    """Pruned density hierarchy: cluster nodes plus per-point fall-out records."""

    n_points: int
    parent: np.ndarray  # per cluster: parent cluster id, -1 for the root
    lambda_birth: np.ndarray  # per cluster: persistence at which it appears
    lambda_max: np.ndarray  # per cluster: largest persistence underneath it
    size: np.ndarray  # per cluster: point count at birth
    point_cluster: np.ndarray  # per point: cluster it fell out of
    point_lambda: np.ndarray  # per point: persistence at fall-out

    @property
    def n_clusters(self):
        return self.parent.size

    def children(self, cluster):
        return np.flatnonzero(self.parent == cluster)

    def leaf_ids(self):
        """Clusters with no cluster children, ascending."""
        has_child = np.zeros(self.n_clusters, dtype=bool)
        has_child[self.parent[self.parent >= 0]] = True
        return np.flatnonzero(~has_child)

    def validate(self):
        if (self.lambda_birth > self.lambda_max + 1e-12).any():
            raise ValidationError("cluster birth persistence exceeds its max persistence")
        child = self.parent >= 0
        if (self.lambda_birth[child] < self.lambda_birth[self.parent[child]] - 1e-12).any():
            raise ValidationError("child clusters must be born at or after their parent")
        if self.point_cluster.shape != (self.n_points,) or self.point_lambda.shape != (self.n_points,):
            raise ValidationError("every point needs exactly one fall-out record")


def _single_linkage(edges, n):
    """Union-find merge of MST edges sorted ascending into a dendrogram."""
    order = np.lexsort((edges[:, 1], edges[:, 0], edges[:, 2]))
    edges = edges[order]
    parent = np.arange(2 * n - 1, dtype=np.intp)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    left = np.empty(n - 1, dtype=np.intp)
    right = np.empty(n - 1, dtype=np.intp)
    dist = np.empty(n - 1, dtype=np.float64)
    size = np.ones(2 * n - 1, dtype=np.int64)
    nxt = n
    for u, v, w in edges:
        ru, rv = find(int(u)), find(int(v))
        left[nxt - n], right[nxt - n], dist[nxt - n] = ru, rv, w
        size[nxt] = size[ru] + size[rv]
        parent[ru] = parent[rv] = nxt
        nxt += 1
    return left, right, dist, size


def _subtree_points(left, right, n, node):
    points = []
    stack = [node]
    while stack:
        cur = stack.pop()
        if cur < n:
            points.append(cur)
        else:
            stack.extend((left[cur - n], right[cur - n]))
    return points


def build_condensed_tree(mst_edges, min_cluster_size, n_points=None):
    """Condense the single-linkage hierarchy of the MST edges.

    Walking down from the root, a split whose two sides both reach
    ``min_cluster_size`` creates two child clusters; otherwise the small
    side's points fall out of the current cluster at the split persistence
    and the large side continues as the same cluster.
    """
    if min_cluster_size < 2:
        raise ValidationError("min_cluster_size must be at least 2")
    edges = np.asarray(mst_edges, dtype=np.float64)
    n = n_points if n_points is not None else int(edges[:, :2].max()) + 1
    left, right, dist, size = _single_linkage(edges, n)

    parents = [-1]
    births = [0.0]
    sizes = [n]
    point_cluster = np.full(n, -1, dtype=np.intp)
    point_lambda = np.zeros(n, dtype=np.float64)

    root = 2 * n - 2
    stack = [(root, 0)]  # (hierarchy node, condensed cluster id)
    while stack:
        node, cluster = stack.pop()
        if node < n:  # singleton "cluster" cannot split further
            point_cluster[node] = cluster
            point_lambda[node] = births[cluster]
            continue
        l, r = left[node - n], right[node - n]
        lam = 1.0 / max(dist[node - n], MIN_MERGE_DIST)
        cl, cr = int(size[l]), int(size[r])
        if cl >= min_cluster_size and cr >= min_cluster_size:
            for child in (l, r):
                parents.append(cluster)
                births.append(lam)
                sizes.append(int(size[child]))
                stack.append((child, len(parents) - 1))
        else:
            for child, count in ((l, cl), (r, cr)):
                if count >= min_cluster_size:
                    stack.append((child, cluster))
                else:
                    pts = _subtree_points(left, right, n, child)
                    point_cluster[pts] = cluster
                    point_lambda[pts] = lam

    parent = np.asarray(parents, dtype=np.intp)
    lambda_birth = np.asarray(births, dtype=np.float64)
    lambda_max = lambda_birth.copy()
    np.maximum.at(lambda_max, point_cluster, point_lambda)
    # propagate children upward so every ancestor's max covers its subtree
    for c in range(parent.size - 1, 0, -1):
        p = parent[c]
        lambda_max[p] = max(lambda_max[p], lambda_max[c])

    tree = CondensedTree(
        n_points=n,
        parent=parent,
        lambda_birth=lambda_birth,
        lambda_max=lambda_max,
        size=np.asarray(sizes, dtype=np.int64),
        point_cluster=point_cluster,
        point_lambda=point_lambda,
    )
    tree.validate()
    return tree


def extract_leaf_clusters(tree, seed=0):
    """Hard labelling from the condensed tree's leaf clusters.

    Points whose fall-out record sits on an internal cluster were pruned
    before reaching any leaf and are labelled -1 (noise). Memberships of the
    returned clustering are the one-hot hard assignment; `soft_memberships`
    refines them.
    """
    leaf_ids = tree.leaf_ids()
    k = leaf_ids.size
    remap = {int(c): i for i, c in enumerate(leaf_ids)}
    labels = np.fromiter(
        (remap.get(int(c), -1) for c in tree.point_cluster),
        count=tree.n_points,
        dtype=np.int32,
    )
    memberships = np.zeros((tree.n_points, k), dtype=np.float64)
    ok = labels >= 0
    memberships[np.flatnonzero(ok), labels[ok]] = 1.0
    return SoftClustering(memberships, labels, tree.lambda_max[leaf_ids], seed=seed)


@dataclass
class ExemplarSet:
    """Per leaf cluster, the member points attaining its maximum persistence."""

    leaf_ids: np.ndarray
    indices: list  # list of int arrays, aligned with leaf_ids

    def validate(self, tree):
        for leaf, idx in zip(self.leaf_ids, self.indices):
            if idx.size == 0:
                raise ValidationError(f"cluster {leaf} has no exemplars")
            if not (tree.point_cluster[idx] == leaf).all():
                raise ValidationError("exemplars must belong to their own cluster")


def exemplars(tree):
    """Densest points of each leaf: persistence within 1e-9 (relative) of the max."""
    leaf_ids = tree.leaf_ids()
    if leaf_ids.size == 0:
        raise ValidationError("condensed tree has no leaf clusters")
    indices = []
    for leaf in leaf_ids:
        members = np.flatnonzero(tree.point_cluster == leaf)
        if members.size == 0:
            raise ValidationError(f"leaf cluster {leaf} is empty")
        lam = tree.point_lambda[members]
        peak = lam.max()
        indices.append(members[lam >= peak * (1.0 - EXEMPLAR_REL_TOL)])
    out = ExemplarSet(leaf_ids, indices)
    out.validate(tree)
    return out


def soft_memberships(tree, exemplar_set, x, seed=0):
    """Concept proximity scores for every point against every leaf cluster.

    Combines, per cluster alpha:

    * a distance membership: inverse minimum distance to alpha's exemplars,
      normalized across clusters;
    * an outlier membership: how far the point's join persistence sits
      between the cluster's birth and max persistence, clamped to [0, 1];

    as ``sqrt(dist) * outlier**2`` (outliers dominate), normalized, and
    finally scaled by the probability that the point belongs to any cluster
    at all -- its join persistence over the max persistence of its nearest
    cluster. Rows therefore sum to at most 1; the residual is noise mass.

    For points inside a cluster the join persistence is their fall-out
    persistence; for all other (point, cluster) pairs it is approximated by
    the inverse exemplar distance, capped at the cluster's max persistence.
    """
    pts = _coords(x)
    leaf_ids = exemplar_set.leaf_ids
    k = leaf_ids.size
    n = pts.shape[0]
    if n != tree.n_points:
        raise ValidationError("coordinate count does not match the condensed tree")

    labels = extract_leaf_clusters(tree, seed=seed).hard_labels

    d_min = np.empty((n, k), dtype=np.float64)
    for a, idx in enumerate(exemplar_set.indices):
        d_min[:, a] = cdist(pts, pts[idx]).min(axis=1)

    birth = tree.lambda_birth[leaf_ids]
    peak = tree.lambda_max[leaf_ids]

    lam_join = np.minimum(peak[None, :], 1.0 / (d_min + DIST_EPS))
    own = labels >= 0
    lam_join[np.flatnonzero(own), labels[own]] = tree.point_lambda[own]

    m_dist = 1.0 / (d_min + DIST_EPS)
    m_dist /= m_dist.sum(axis=1, keepdims=True)

    span = peak - birth
    degenerate = span <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        m_out = np.clip((lam_join - birth[None, :]) / span[None, :], 0.0, 1.0)
    if degenerate.any():
        # zero-width persistence plateau: membership is crisp
        for a in np.flatnonzero(degenerate):
            m_out[:, a] = (labels == a).astype(np.float64)

    combined = np.sqrt(m_dist) * m_out ** 2
    totals = combined.sum(axis=1, keepdims=True)
    nonzero = totals[:, 0] > 0
    combined[nonzero] /= totals[nonzero]

    nearest = np.argmin(d_min, axis=1)
    rows = np.arange(n)
    prob_any = lam_join[rows, nearest] / peak[nearest]
    prob_any = np.clip(prob_any, 0.0, 1.0)

    memberships = prob_any[:, None] * combined
    return SoftClustering(memberships, labels, peak, seed=seed)


@dataclass
class ConceptDiscovery:
    """Bundle of everything one clustering run produces."""

    clustering: SoftClustering
    tree: CondensedTree
    exemplar_set: ExemplarSet
    params: dict


def discover_concepts(x, min_cluster_size=50, min_samples=20, seed=0):
    """Full density-clustering pass over embedded coordinates.

    ``min_samples`` is the neighbor count for core distances; the default
    parameters match the reference configuration (50 / 20, leaf extraction).
    """
    from .embed import knn_graph  # local import to avoid a cycle

    pts = _coords(x)
    n = pts.shape[0]
    if min_samples >= n:
        raise ValidationError(f"min_samples={min_samples} must be below n={n}")
    graph = knn_graph(pts, min_samples)
    core = core_distances(graph, min_samples)
    dist = cdist(pts, pts)
    mrd = mutual_reachability(dist, core)
    mst = minimum_spanning_tree(mrd)
    tree = build_condensed_tree(mst, min_cluster_size, n_points=n)
    exemplar_set = exemplars(tree)
    clustering = soft_memberships(tree, exemplar_set, pts, seed=seed)
    params = {
        "min_cluster_size": min_cluster_size,
        "min_samples": min_samples,
        "seed": seed,
    }
    return ConceptDiscovery(clustering, tree, exemplar_set, params)
