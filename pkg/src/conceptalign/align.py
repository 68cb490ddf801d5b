"""Concept-based alignment between probabilistic clusterings.

Two clusterings of the same points are compared through the pairwise
concordance of their membership vectors: for every unordered point pair
(i, j) both clusterings state how strongly the pair is "together", and the
cross-clustering distance averages the absolute concordance differences.
One minus that distance is the concept-based alignment (CBA) score, which
for crisp partitions coincides exactly with the classic Rand index.

Normalization note: the membership-vector distance used here is
``d_ms(p, q) = 1 - 0.5 * ||p - q||_1``. The 0.5 is what makes the crisp
reduction exact -- one-hot rows differ by an L1 distance of 0 or 2, so the
halved norm maps them onto the Rand index's {same, different} indicator.

The pair loop is the hot path (~2e9 membership-vector operations at full
sample scale), so the implementation is blocked and cache friendly. All
per-pair terms are reduced with exact (correctly rounded) summation, which
makes the result independent of block size and worker schedule, bit for bit.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ValidationError

DEFAULT_BLOCK = 1024

WORKERS_ENV = "CONCEPTALIGN_WORKERS"


def _worker_count(workers=None):
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, workers)


def _as_membership_matrix(obj):
    """Accept a SoftClustering or a plain (n, k) array of memberships."""
    mat = getattr(obj, "memberships", obj)
    mat = np.ascontiguousarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise ValidationError("memberships must be a 2-d array")
    if mat.shape[1] < 1:
        raise ValidationError("clustering has no concepts (k = 0)")
    if mat.min(initial=0.0) < -1e-12 or mat.max(initial=0.0) > 1 + 1e-9:
        raise ValidationError("membership entries must lie in [0, 1]")
    if mat.shape[0] and mat.sum(axis=1).max() > 1 + 1e-6:
        raise ValidationError("membership row sums must not exceed 1")
    return np.clip(mat, 0.0, 1.0)


def _resolve_sample(n_p, n_q, sample):
    if sample is None:
        if n_p != n_q:
            raise ValidationError("clusterings cover different point counts and no sample given")
        return np.arange(n_p)
    idx = np.asarray(sample, dtype=np.intp)
    if idx.ndim != 1 or idx.size < 2:
        raise ValidationError("sample must list at least two indices")
    if np.unique(idx).size != idx.size:
        raise ValidationError("sample contains duplicate indices")
    if idx.min() < 0 or idx.max() >= min(n_p, n_q):
        raise ValidationError("sample index out of range for one of the clusterings")
    return idx


def membership_distance(p, q):
    """Concordance of two membership vectors from one clustering.

    Returns ``1 - 0.5 * ||p - q||_1``, a value in [0, 1]: 1 when the two
    points load identically on every concept, 0 when they are fully
    assigned to different concepts.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValidationError("membership vectors come from one clustering and must match in length")
    for v in (p, q):
        if v.min(initial=0.0) < 0 or v.max(initial=0.0) > 1:
            raise ValidationError("membership entries must lie in [0, 1]")
    return 1.0 - 0.5 * float(np.abs(p - q).sum())


def _block_ranges(n, block):
    return [(s, min(s + block, n)) for s in range(0, n, block)]


def _pair_term_lists(P, Q, block):
    """Yield, block pair by block pair, the per-pair concordance-difference terms.

    Each term is ``0.5 * |  ||P_i - P_j||_1 - ||Q_i - Q_j||_1  |`` for one
    unordered pair i < j. Terms are produced as flat float lists so callers
    can reduce them exactly with ``math.fsum``.
    """
    ranges = _block_ranges(P.shape[0], block)
    jobs = [(bi, bj) for bi in range(len(ranges)) for bj in range(bi, len(ranges))]

    def run(job):
        bi, bj = job
        i0, i1 = ranges[bi]
        j0, j1 = ranges[bj]
        a = cdist(P[i0:i1], P[j0:j1], "cityblock")
        b = cdist(Q[i0:i1], Q[j0:j1], "cityblock")
        t = np.abs(a - b) * 0.5
        if bi == bj:
            t = t[np.triu_indices(i1 - i0, k=1)]
        return t.ravel().tolist()

    workers = _worker_count()
    if workers == 1:
        for job in jobs:
            yield run(job)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(run, jobs)


def cross_clustering_distance(P, Q, sample=None, block=DEFAULT_BLOCK):
    """Average concordance difference over unordered point pairs.

    A pseudo-metric on probabilistic clusterings: zero between identical
    clusterings, symmetric, and obeying the triangle inequality. Exact
    summation keeps the value independent of blocking and worker count.
    """
    P = _as_membership_matrix(P)
    Q = _as_membership_matrix(Q)
    idx = _resolve_sample(P.shape[0], Q.shape[0], sample)
    P = P[idx]
    Q = Q[idx]
    n = P.shape[0]
    total = math.fsum(
        term for terms in _pair_term_lists(P, Q, block) for term in terms
    )
    n_pairs = n * (n - 1) // 2
    return total / n_pairs


def cba(P, Q, sample=None, block=DEFAULT_BLOCK):
    """Concept-based alignment: ``1 - cross_clustering_distance`` in [0, 1]."""
    return 1.0 - cross_clustering_distance(P, Q, sample=sample, block=block)


def concept_pair_distance(p_col, q_col, sample=None):
    """Distance between one concept of each clustering.

    Averages ``| |p_i - p_j| - |q_i - q_j| |`` over unordered point pairs,
    i.e. how differently the two concepts separate the same point pairs.
    Symmetric in its arguments and zero for elementwise-equal columns.
    """
    p = np.asarray(p_col, dtype=np.float64).reshape(-1, 1)
    q = np.asarray(q_col, dtype=np.float64).reshape(-1, 1)
    idx = _resolve_sample(p.shape[0], q.shape[0], sample)
    p = p[idx]
    q = q[idx]
    n = p.shape[0]
    total = math.fsum(
        term for terms in _pair_term_lists_single(p, q) for term in terms
    )
    return total / (n * (n - 1) // 2)


def _pair_term_lists_single(p, q, block=DEFAULT_BLOCK):
    ranges = _block_ranges(p.shape[0], block)
    for bi in range(len(ranges)):
        i0, i1 = ranges[bi]
        for bj in range(bi, len(ranges)):
            j0, j1 = ranges[bj]
            t = np.abs(
                cdist(p[i0:i1], p[j0:j1], "cityblock")
                - cdist(q[i0:i1], q[j0:j1], "cityblock")
            )
            if bi == bj:
                t = t[np.triu_indices(i1 - i0, k=1)]
            yield t.ravel().tolist()


def concept_pair_matrix(P, Q, sample=None, block=256, d_cross=None, check_upper_bound=True):
    """All pairwise concept distances between two clusterings.

    Returns a (k_P, k_Q) matrix of `concept_pair_distance` values. The total
    mass of the matrix upper-bounds the cross-clustering distance; the bound
    is asserted (pass ``check_upper_bound=False`` to skip recomputing it).
    """
    P = _as_membership_matrix(P)
    Q = _as_membership_matrix(Q)
    idx = _resolve_sample(P.shape[0], Q.shape[0], sample)
    Ps = P[idx]
    Qs = Q[idx]
    n, k_p = Ps.shape
    k_q = Qs.shape[1]
    sums = np.zeros((k_p, k_q), dtype=np.float64)
    ranges = _block_ranges(n, block)
    for bi in range(len(ranges)):
        i0, i1 = ranges[bi]
        for bj in range(bi, len(ranges)):
            j0, j1 = ranges[bj]
            # (bi_size, bj_size, k) gaps per concept column
            dp = np.abs(Ps[i0:i1, None, :] - Ps[None, j0:j1, :])
            dq = np.abs(Qs[i0:i1, None, :] - Qs[None, j0:j1, :])
            if bi == bj:
                iu = np.triu_indices(i1 - i0, k=1)
                dp = dp[iu]
                dq = dq[iu]
            else:
                dp = dp.reshape(-1, k_p)
                dq = dq.reshape(-1, k_q)
            for a in range(k_p):
                sums[a] += np.abs(dp[:, a, None] - dq).sum(axis=0)
    matrix = sums / (n * (n - 1) // 2)
    if check_upper_bound:
        if d_cross is None:
            d_cross = cross_clustering_distance(P, Q, sample=sample)
        if matrix.sum() < d_cross - 1e-9:
            raise ValidationError(
                "concept-pair distances sum below the total clustering distance"
            )
    return matrix


def crisp_to_membership(labels):
    """One-hot membership rows for a crisp labelling (labels >= 0)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.size == 0:
        raise ValidationError("labels must be a non-empty 1-d array")
    if labels.min() < 0:
        raise ValidationError("crisp labels must be non-negative")
    k = int(labels.max()) + 1
    out = np.zeros((labels.size, k), dtype=np.float64)
    out[np.arange(labels.size), labels] = 1.0
    return out


def robustness(c1, c2, sample=None):
    """CBA between two clustering runs of the same points (e.g. two seeds)."""
    n1 = _as_membership_matrix(c1).shape[0]
    n2 = _as_membership_matrix(c2).shape[0]
    if n1 != n2:
        raise ValidationError("robustness compares clusterings of the same point set")
    return cba(c1, c2, sample=sample)


@dataclass
class AlignmentReport:
    """CBA between one pair of representations plus its per-concept breakdown."""

    cba: float
    d_cross: float
    concept_pair_matrix: np.ndarray
    matches: list = field(default_factory=list)  # (concept_p, concept_q, distance)
    sample_size: int = 0
    seed: int = 0

    def validate(self):
        if abs(self.cba - (1.0 - self.d_cross)) > 1e-12:
            raise ValidationError("cba must equal 1 - d_cross")
        if self.concept_pair_matrix.min(initial=0.0) < 0:
            raise ValidationError("concept-pair distances must be non-negative")
        if self.concept_pair_matrix.sum() < self.d_cross - 1e-9:
            raise ValidationError("concept-pair distance mass below total distance")

    def to_json(self):
        self.validate()
        return {
            "schema_version": 1,
            "kind": "alignment",
            "cba": self.cba,
            "d_cross": self.d_cross,
            "concept_pair_matrix": [[float(v) for v in row] for row in self.concept_pair_matrix],
            "matches": [
                {"concept_p": int(a), "concept_q": int(b), "distance": float(d)}
                for a, b, d in self.matches
            ],
            "sample_size": self.sample_size,
            "seed": self.seed,
        }
