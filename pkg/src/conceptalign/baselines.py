"""Linear and centroid concept baselines, and the neighbor-layer sanity check.

The baselines produce the same soft-clustering shape as density-based
concept discovery so that any concept source can feed the alignment
machinery. Scores are normalized per point to sum to one (the alignment
distance requires row sums bounded by one).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .align import cba
from .data import SoftClustering, stage_rng
from .embed import pca_reduce
from .errors import ValidationError

SCORE_EPS = 1e-12


def pca_concepts(x, n_components=None):
    """One concept per principal direction; activation is the clipped projection.

    Projections of centered data onto each component are clipped at zero
    (pointing away from a direction means the concept is inactive), then
    normalized per point. Points with no positive projection keep an
    all-zero row and a noise label. By default every component is used
    (bounded by the data rank), the conservative baseline choice.
    """
    data = np.ascontiguousarray(getattr(x, "data", getattr(x, "points", x)), dtype=np.float64)
    if n_components is None:
        n_components = np.linalg.matrix_rank(data - data.mean(axis=0))
    proj = pca_reduce(data, n_components).points
    scores = np.clip(proj, 0.0, None)
    totals = scores.sum(axis=1, keepdims=True)
    nonzero = totals[:, 0] > 0
    scores[nonzero] /= totals[nonzero]
    labels = np.where(nonzero, np.argmax(scores, axis=1), -1).astype(np.int32)
    return SoftClustering(scores, labels, np.ones(n_components), seed=0)


def inverse_distance_scores(dists):
    """Concept proximity from distances: normalized inverse distance.

    A zero distance is epsilon-dominated (score ~ 1); equidistant rows split
    their mass evenly. Rows always sum to exactly one.
    """
    scores = 1.0 / (np.asarray(dists, dtype=np.float64) + SCORE_EPS)
    return scores / scores.sum(axis=1, keepdims=True)


def _kmeans_pp_init(data, k, rng):
    n = data.shape[0]
    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    d2 = ((data - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total == 0:
            centers[i:] = data[rng.integers(n, size=k - i)]
            break
        probs = d2 / total
        centers[i] = data[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((data - centers[i]) ** 2).sum(axis=1))
    return centers


def kmeans_concepts(x, k, seed=0, max_iter=300):
    """Spherical concepts: Lloyd's algorithm with k-means++ seeding.

    Concept proximity is the inverse distance to each centroid, normalized
    per point, so rows sum to exactly one.
    """
    data = np.ascontiguousarray(getattr(x, "data", getattr(x, "points", x)), dtype=np.float64)
    n = data.shape[0]
    if k > n:
        raise ValidationError(f"k={k} exceeds the point count n={n}")
    rng = stage_rng(seed, "kmeans")
    centers = _kmeans_pp_init(data, k, rng)
    assign = np.full(n, -1)
    for _ in range(max_iter):
        d = cdist(data, centers)
        new_assign = d.argmin(axis=1)
        for empty in np.setdiff1d(np.arange(k), new_assign):
            # repair: hand the empty cluster the farthest point of the largest one
            counts = np.bincount(new_assign, minlength=k)
            big = counts.argmax()
            candidates = np.flatnonzero(new_assign == big)
            victim = candidates[d[candidates, big].argmax()]
            new_assign[victim] = empty
        if (new_assign == assign).all():
            break
        assign = new_assign
        for c in range(k):
            centers[c] = data[assign == c].mean(axis=0)
    scores = inverse_distance_scores(cdist(data, centers))
    return SoftClustering(scores, assign.astype(np.int32), np.ones(k), seed=seed)


@dataclass
class SanityResult:
    """Outcome of the neighboring-layer alignment check for one concept source."""

    most_aligned: list  # per layer, the index of its best-aligned other layer
    neighbor_ratio: float
    method: str = ""
    cba_matrix: np.ndarray = None

    def to_json(self):
        return {
            "schema_version": 1,
            "kind": "sanity",
            "method": self.method,
            "most_aligned": [int(v) for v in self.most_aligned],
            "neighbor_ratio": self.neighbor_ratio,
            "cba_matrix": None if self.cba_matrix is None
            else [[float(v) for v in row] for row in self.cba_matrix],
        }


def sanity_check(clusterings, sample=None, method=""):
    """Fraction of layers whose most-aligned layer is a direct neighbor.

    ``clusterings`` is the ordered per-layer list of soft clusterings (any
    concept source). Alignment is symmetric, so each pair is scored once.
    """
    n_layers = len(clusterings)
    if n_layers < 3:
        raise ValidationError("sanity check needs at least three layers")
    scores = np.full((n_layers, n_layers), -np.inf)
    for i in range(n_layers):
        for j in range(i + 1, n_layers):
            scores[i, j] = scores[j, i] = cba(clusterings[i], clusterings[j], sample=sample)
    best = scores.argmax(axis=1)
    hits = np.abs(best - np.arange(n_layers)) == 1
    full = np.where(np.isfinite(scores), scores, 1.0)
    return SanityResult(best.tolist(), float(hits.mean()), method, full)
