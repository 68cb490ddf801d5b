"""Clustering-quality diagnostics: density validity and intrinsic dimension.

The density-based validity of a labelled clustering contrasts each
cluster's internal density sparseness against its separation from the other
clusters, both measured under an all-points mutual-reachability metric.
Values live in [-1, 1]; above zero means clusters are denser inside than
between each other.

Intrinsic dimensionality uses the two-nearest-neighbor ratio: the
distribution of mu = r2 / r1 determines the dimension of the manifold the
points were sampled from, independent of scale and of the embedding space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .cluster import minimum_spanning_tree
from .errors import ValidationError

TRIM_FRACTION = 0.1


def _coords(x):
    return np.ascontiguousarray(getattr(x, "points", getattr(x, "data", x)), dtype=np.float64)


def _all_points_core_distance(dist, dims):
    """Inverse-distance density estimate per point within one cluster."""
    m = dist.shape[0]
    with np.errstate(divide="ignore"):
        logs = -dims * np.log(dist)
    np.fill_diagonal(logs, -np.inf)
    if np.isposinf(logs).any():
        # coincident points: infinitely dense
        core = np.zeros(m)
        finite_rows = ~np.isposinf(logs).any(axis=1)
        if finite_rows.any():
            lse = logsumexp(logs[finite_rows], axis=1) - np.log(m - 1)
            core[finite_rows] = np.exp(-lse / dims)
        return core
    lse = logsumexp(logs, axis=1) - np.log(m - 1)
    return np.exp(-lse / dims)


def dbcv(x, labels, weighted=False):
    """Density-based validity per cluster and its mean.

    Needs at least two clusters, each with at least two points; noise
    (label -1) is ignored. ``weighted=True`` weights the mean by cluster
    size (used during hyperparameter tuning); the default mean is
    unweighted so the noise rate can be judged separately.
    """
    pts = _coords(x)
    labels = np.asarray(labels)
    dims = pts.shape[1]
    # the index is scale-free, so pin the working scale for float stability
    spread = np.abs(pts - pts.mean(axis=0)).max()
    if spread > 0:
        pts = pts / spread
    ids = np.unique(labels[labels >= 0])
    if ids.size < 2:
        raise ValidationError("density validity needs at least two clusters")
    members = [np.flatnonzero(labels == c) for c in ids]
    for c, idx in zip(ids, members):
        if idx.size < 2:
            raise ValidationError(f"cluster {c} has fewer than two points")

    cores = []
    sparseness = []
    internal = []
    for idx in members:
        sub = pts[idx]
        dist = cdist(sub, sub)
        core = _all_points_core_distance(dist, dims)
        mrd = np.maximum(dist, np.maximum(core[:, None], core[None, :]))
        np.fill_diagonal(mrd, 0.0)
        mst = minimum_spanning_tree(mrd)
        degree = np.zeros(idx.size, dtype=int)
        for u, v, _ in mst:
            degree[int(u)] += 1
            degree[int(v)] += 1
        inner = degree >= 2
        edge_inner = np.array([inner[int(u)] and inner[int(v)] for u, v, _ in mst])
        if edge_inner.any():
            dsc = mst[edge_inner, 2].max()
        else:  # two-point clusters have no interior; fall back to all edges
            dsc = mst[:, 2].max()
            inner = np.ones(idx.size, dtype=bool)
        cores.append(core)
        sparseness.append(dsc)
        internal.append(inner)

    k = ids.size
    separation = np.full((k, k), np.inf)
    for i in range(k):
        for j in range(i + 1, k):
            pi = pts[members[i]][internal[i]]
            pj = pts[members[j]][internal[j]]
            d = cdist(pi, pj)
            ci = cores[i][internal[i]][:, None]
            cj = cores[j][internal[j]][None, :]
            separation[i, j] = separation[j, i] = np.maximum(d, np.maximum(ci, cj)).min()

    values = np.empty(k)
    for i in range(k):
        dspc = separation[i].min()
        values[i] = (dspc - sparseness[i]) / max(dspc, sparseness[i])
    if weighted:
        sizes = np.array([idx.size for idx in members], dtype=np.float64)
        mean = float(np.sum(values * sizes) / sizes.sum())
    else:
        mean = float(values.mean())
    return values, mean


def twonn_id(points):
    """Two-nearest-neighbor intrinsic-dimension estimate.

    Duplicate points (first-neighbor distance zero) are dropped; at least 10
    usable points are required. The largest 10% of the mu = r2/r1 ratios are
    discarded and the dimension is the maximum-likelihood fit of the
    remaining ratios, accounting for that truncation (log mu is exponential
    with rate d, so the retained sample is an exponential censored at the
    trim threshold).
    """
    pts = _coords(points)
    n = pts.shape[0]
    if n < 10:
        raise ValidationError("intrinsic dimension needs at least 10 points")
    from .embed import knn_graph

    graph = knn_graph(pts, 2)
    r1 = graph.distances[:, 0]
    r2 = graph.distances[:, 1]
    keep = r1 > 0
    if keep.sum() < 10:
        raise ValidationError("fewer than 10 distinct points after dropping duplicates")
    mu = r2[keep] / r1[keep]
    x = np.sort(np.log(mu))
    m = int(np.floor((1.0 - TRIM_FRACTION) * x.size))
    m = max(m, 2)
    retained = x[:m]
    t = retained[-1]
    xbar = retained.mean()
    if t <= 0 or xbar <= 0:
        raise ValidationError("degenerate neighbor ratios; cannot estimate dimension")

    def score(d):
        return 1.0 / d - t / np.expm1(d * t) - xbar

    # score decreases from t/2 (d -> 0) to 0- ... root exists iff xbar < t/2
    if xbar >= t / 2:
        return 1.0 / xbar
    lo, hi = 1e-9, 2.0
    while score(hi) > 0:
        hi *= 2
        if hi > 1e9:
            return 1.0 / xbar
    return float(brentq(score, lo, hi))


@dataclass
class ValidityReport:
    """Per-cluster validity and intrinsic dimension, plus their means."""

    dbcv_per_cluster: np.ndarray
    dbcv_mean: float
    id_per_cluster: list  # floats or None where too small to estimate
    id_mean: float
    weighted: bool = False
    id_space: str = "original"

    def to_json(self):
        return {
            "schema_version": 1,
            "kind": "validity",
            "dbcv_per_cluster": [float(v) for v in self.dbcv_per_cluster],
            "dbcv_mean": self.dbcv_mean,
            "id_per_cluster": [None if v is None else float(v) for v in self.id_per_cluster],
            "id_mean": self.id_mean,
            "weighted": self.weighted,
            "id_space": self.id_space,
        }


def validity_report(clustering_space, id_space_points, labels, weighted=False,
                    id_space="original"):
    """DBCV in the clustering space plus per-concept intrinsic dimension.

    ``id_space_points`` are the coordinates used for the dimension estimate
    (by default the original high-dimensional features; the choice is
    recorded in the report).
    """
    values, mean = dbcv(clustering_space, labels, weighted=weighted)
    labels = np.asarray(labels)
    pts = _coords(id_space_points)
    ids = np.unique(labels[labels >= 0])
    per_cluster = []
    for c in ids:
        sub = pts[labels == c]
        try:
            per_cluster.append(twonn_id(sub))
        except ValidationError:
            per_cluster.append(None)
    usable = [v for v in per_cluster if v is not None]
    id_mean = float(np.mean(usable)) if usable else float("nan")
    return ValidityReport(values, mean, per_cluster, id_mean, weighted, id_space)
