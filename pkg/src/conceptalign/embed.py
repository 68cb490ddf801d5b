"""Low-dimensional neighbor embedding ahead of density clustering.

The embedding follows the fuzzy-graph recipe: exact k-nearest neighbors,
smooth-kNN membership strengths calibrated per point by binary search,
probabilistic-union symmetrization, and a stochastic gradient layout of the
cross-entropy objective with negative sampling. The layout applies updates
batch-synchronously per epoch (gather gradients, then scatter), which keeps
it fully deterministic for a fixed seed without any threading caveats.

Also provides the PCA projection used by the linear baseline and the
distance-fidelity diagnostic comparing original vs embedded geometry.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.optimize import curve_fit
from scipy.spatial.distance import cdist, pdist

from .data import stage_rng
from .errors import ValidationError

SMOOTH_K_TOLERANCE = 1e-5
MIN_SIGMA_SCALE = 1e-3
GRAD_CLIP = 4.0


@dataclass
class NeighborGraph:
    """Exact k-nearest-neighbor lists: indices and ascending distances."""

    indices: np.ndarray  # (n, k) int
    distances: np.ndarray  # (n, k) float, sorted ascending

    @property
    def n(self):
        return self.indices.shape[0]

    @property
    def k(self):
        return self.indices.shape[1]


@dataclass
class Embedding:
    """Low-dimensional coordinates plus the parameters that produced them."""

    points: np.ndarray  # (n, f') float
    params: dict

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def _as_array(x):
    return np.ascontiguousarray(getattr(x, "data", getattr(x, "points", x)), dtype=np.float64)


def knn_graph(x, k, block=2048):
    """Exact k-nearest neighbors under Euclidean distance.

    Ties are broken by the smaller point index, so the result is a pure
    function of the input. Self-neighbors are excluded.
    """
    data = _as_array(x)
    n = data.shape[0]
    if k >= n:
        raise ValidationError(f"k={k} must be smaller than the point count n={n}")
    idx_out = np.empty((n, k), dtype=np.intp)
    dist_out = np.empty((n, k), dtype=np.float64)
    for s in range(0, n, block):
        e = min(s + block, n)
        d = cdist(data[s:e], data)
        d[np.arange(s, e) - s, np.arange(s, e)] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        idx_out[s:e] = order
        dist_out[s:e] = np.take_along_axis(d, order, axis=1)
    return NeighborGraph(idx_out, dist_out)


def knn_from_distance_matrix(dmat, k):
    """Neighbor graph from a precomputed symmetric distance matrix."""
    d = np.asarray(dmat, dtype=np.float64).copy()
    n = d.shape[0]
    if d.shape != (n, n):
        raise ValidationError("distance matrix must be square")
    if k >= n:
        raise ValidationError(f"k={k} must be smaller than the point count n={n}")
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    return NeighborGraph(order, np.take_along_axis(d, order, axis=1))


def smooth_knn_calibration(distances, n_iter=64):
    """Per-point kernel widths so each fuzzy neighborhood has size ~log2(k).

    Returns ``(sigma, rho)`` where ``rho`` is the distance to the nearest
    non-identical neighbor and ``sigma`` solves
    ``sum_j exp(-max(d_ij - rho_i, 0) / sigma_i) = log2(k)`` by bisection.
    """
    n, k = distances.shape
    target = np.log2(k)
    pos = np.where(distances > 0, distances, np.inf)
    rho = np.min(pos, axis=1)
    rho[~np.isfinite(rho)] = 0.0

    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    shifted = distances - rho[:, None]
    for _ in range(n_iter):
        psum = np.where(shifted > 0, np.exp(-shifted / mid[:, None]), 1.0).sum(axis=1)
        too_high = psum > target
        hi = np.where(too_high, mid, hi)
        lo = np.where(too_high, lo, mid)
        mid = np.where(np.isfinite(hi), (lo + hi) / 2.0, mid * 2.0)
        if np.all(np.abs(psum - target) < SMOOTH_K_TOLERANCE):
            break
    sigma = mid
    row_mean = distances.mean(axis=1)
    overall_mean = distances.mean()
    floor = np.where(rho > 0, MIN_SIGMA_SCALE * row_mean, MIN_SIGMA_SCALE * overall_mean)
    return np.maximum(sigma, floor), rho


def fuzzy_graph(graph):
    """Symmetrized membership-strength graph of a NeighborGraph."""
    n, k = graph.indices.shape
    sigma, rho = smooth_knn_calibration(graph.distances)
    shifted = graph.distances - rho[:, None]
    vals = np.where(shifted <= 0, 1.0, np.exp(-shifted / sigma[:, None]))
    rows = np.repeat(np.arange(n), k)
    a = sp.coo_matrix((vals.ravel(), (rows, graph.indices.ravel())), shape=(n, n)).tocsr()
    at = a.T.tocsr()
    w = a + at - a.multiply(at)
    w = w.tocoo()
    w.eliminate_zeros()
    return w


@lru_cache(maxsize=None)
def _curve_params(min_dist, spread=1.0):
    # Least-squares fit of 1 / (1 + a * d^(2b)) to the target membership curve.
    xv = np.linspace(0, spread * 3, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    (a, b), _ = curve_fit(lambda x, a, b: 1.0 / (1.0 + a * x ** (2.0 * b)), xv, yv)
    return float(a), float(b)


def _epochs_per_sample(weights, n_epochs):
    result = -1.0 * np.ones(weights.shape[0])
    n_samples = n_epochs * (weights / weights.max())
    result[n_samples > 0] = float(n_epochs) / n_samples[n_samples > 0]
    return result


def _mds_init(dmat, dim):
    # Classical (Torgerson) scaling of the squared-distance Gram matrix.
    d2 = np.asarray(dmat, dtype=np.float64) ** 2
    n = d2.shape[0]
    j = np.eye(n) - np.ones((n, n)) / n
    g = -0.5 * j @ d2 @ j
    vals, vecs = np.linalg.eigh(g)
    order = np.argsort(vals)[::-1][:dim]
    comp = vecs[:, order] * np.sqrt(np.maximum(vals[order], 0.0))
    return comp


def _sgd_layout(w, init, n_epochs, seed, a, b, negative_sample_rate=5,
                learning_rate=1.0, repulsion=1.0):
    head = w.row.astype(np.intp)
    tail = w.col.astype(np.intp)
    eps = _epochs_per_sample(w.data, n_epochs)
    eps_neg = eps / negative_sample_rate
    next_sample = eps.copy()
    next_neg = eps_neg.copy()

    y = init.astype(np.float64).copy()
    n, dim = y.shape
    rng = stage_rng(seed, "sgd-layout")

    for epoch in range(n_epochs):
        alpha = learning_rate * (1.0 - epoch / float(n_epochs))
        active = next_sample <= epoch
        if active.any():
            h = head[active]
            t = tail[active]
            delta = y[h] - y[t]
            dsq = np.einsum("ij,ij->i", delta, delta)
            coeff = np.zeros_like(dsq)
            nz = dsq > 0
            coeff[nz] = (-2.0 * a * b * dsq[nz] ** (b - 1.0)) / (a * dsq[nz] ** b + 1.0)
            grad = np.clip(coeff[:, None] * delta, -GRAD_CLIP, GRAD_CLIP)
            np.add.at(y, h, alpha * grad)
            np.add.at(y, t, -alpha * grad)
            next_sample[active] += eps[active]

            reps = ((epoch - next_neg[active]) / eps_neg[active]).astype(np.int64)
            reps = np.maximum(reps, 0)
            total = int(reps.sum())
            if total:
                hh = np.repeat(h, reps)
                kk = rng.integers(0, n, total)
                delta = y[hh] - y[kk]
                dsq = np.einsum("ij,ij->i", delta, delta)
                coeff = np.zeros_like(dsq)
                nz = dsq > 0
                coeff[nz] = (2.0 * repulsion * b) / (
                    (0.001 + dsq[nz]) * (a * dsq[nz] ** b + 1.0)
                )
                grad = np.where(
                    nz[:, None],
                    np.clip(coeff[:, None] * delta, -GRAD_CLIP, GRAD_CLIP),
                    np.where(hh[:, None] == kk[:, None], 0.0, GRAD_CLIP),
                )
                np.add.at(y, hh, alpha * grad)
            next_neg[active] += reps * eps_neg[active]
    return y


def neighbor_embed(x, dim, n_neighbors=30, min_dist=0.01, epochs=200, seed=0,
                   negative_sample_rate=5, metric="euclidean"):
    """Embed points into ``dim`` dimensions preserving fuzzy neighborhoods.

    ``x`` is a feature matrix (or raw array); with ``metric="precomputed"``
    it is a symmetric distance matrix instead. The initial layout is the PCA
    (vector input) or classical-scaling (distance input) projection, scaled
    to a maximum absolute coordinate of 10. Deterministic given the seed.

    Note: even with ``dim == f`` and generous neighborhoods the result is a
    new layout, not a copy of the input; only neighborhood structure is
    preserved, never coordinates.
    """
    if metric == "precomputed":
        dmat = np.asarray(x, dtype=np.float64)
        n = dmat.shape[0]
        k = min(n_neighbors, n - 1)
        graph = knn_from_distance_matrix(dmat, k)
        init = _mds_init(dmat, dim)
    else:
        data = _as_array(x)
        n, f = data.shape
        if dim > min(f, 50):
            raise ValidationError(f"embedding dim {dim} exceeds min(f, 50) = {min(f, 50)}")
        if n_neighbors >= n:
            raise ValidationError(f"n_neighbors={n_neighbors} must be below n={n}")
        if np.allclose(data, data[0]):
            raise ValidationError("degenerate input: all points identical")
        k = n_neighbors
        graph = knn_graph(data, k)
        init = pca_reduce(data, min(dim, np.linalg.matrix_rank(data - data.mean(axis=0)))).points
        if init.shape[1] < dim:  # rank-deficient input: pad with zeros
            init = np.hstack([init, np.zeros((n, dim - init.shape[1]))])

    scale = np.abs(init).max()
    init = init * (10.0 / scale) if scale > 0 else init
    w = fuzzy_graph(graph)
    a, b = _curve_params(min_dist)
    pts = _sgd_layout(w, init, epochs, seed, a, b, negative_sample_rate=negative_sample_rate)
    return Embedding(pts, {
        "dim": dim,
        "n_neighbors": n_neighbors,
        "min_dist": min_dist,
        "epochs": epochs,
        "seed": seed,
        "negative_sample_rate": negative_sample_rate,
        "metric": metric,
    })


def pca_reduce(x, dim):
    """Project onto the top principal components of mean-centered data.

    Components are ordered by descending eigenvalue and sign-fixed so the
    largest-magnitude loading of each component is positive.
    """
    data = _as_array(x)
    n, f = data.shape
    if dim > min(n, f):
        raise ValidationError(f"dim {dim} exceeds min(n, f) = {min(n, f)}")
    centered = data - data.mean(axis=0)
    rank = np.linalg.matrix_rank(centered)
    if dim > rank:
        raise ValidationError(f"dim {dim} exceeds data rank {rank}")
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:dim]
    flip = np.sign(comps[np.arange(dim), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    return Embedding(centered @ comps.T, {"dim": dim, "method": "pca"})


def pca_eigenvalues(x):
    """Eigenvalues of the covariance of mean-centered data (descending)."""
    data = _as_array(x)
    centered = data - data.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return s ** 2 / max(data.shape[0] - 1, 1)


def distance_fidelity_rmse(x, e, sample):
    """RMSE between unit-mean-scaled pairwise distance matrices.

    Both the original and embedded pairwise Euclidean distances over
    ``sample`` are divided by their own mean, so the score ignores any
    global scale and is symmetric in its two arguments.
    """
    idx = np.asarray(sample, dtype=np.intp)
    if idx.size < 2:
        raise ValidationError("need at least two sample indices")
    if np.unique(idx).size != idx.size:
        raise ValidationError("sample contains duplicate indices")
    d1 = pdist(_as_array(x)[idx])
    d2 = pdist(_as_array(e)[idx])
    m1, m2 = d1.mean(), d2.mean()
    if m1 == 0 or m2 == 0:
        raise ValidationError("degenerate sample: all pairwise distances are zero")
    return float(np.sqrt(np.mean((d1 / m1 - d2 / m2) ** 2)))
