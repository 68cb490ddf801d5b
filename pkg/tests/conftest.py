"""Shared fixtures and independent reference implementations (oracles).

Every oracle here is deliberately written as directly as possible -- plain
loops and textbook formulas -- so it shares no code path with the library.
"""

import math

import numpy as np
import pytest


def naive_cba_rows(P, Q):
    """Double-loop CBA reference: per-row L1 via numpy, exact accumulation.

    Bitwise-faithful to sequential per-pair summation for k <= 6 columns.
    """
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    n = P.shape[0]
    terms = []
    for i in range(n):
        a = np.abs(P[i] - P[i + 1:]).sum(axis=1)
        b = np.abs(Q[i] - Q[i + 1:]).sum(axis=1)
        terms.extend((np.abs(a - b) * 0.5).tolist())
    return 1.0 - math.fsum(terms) / (n * (n - 1) // 2)


def naive_cba_pure(P, Q):
    """Triple-loop pure-Python CBA reference, any column count."""
    n = len(P)
    terms = []
    for i in range(n):
        for j in range(i + 1, n):
            a = 0.0
            for d in range(P.shape[1]):
                a += abs(float(P[i, d]) - float(P[j, d]))
            b = 0.0
            for d in range(Q.shape[1]):
                b += abs(float(Q[i, d]) - float(Q[j, d]))
            terms.append(abs(a - b) * 0.5)
    return 1.0 - math.fsum(terms) / (n * (n - 1) // 2)


def rand_index_paircount(a, b):
    """Classic Rand index by explicit pair counting."""
    a = np.asarray(a)
    b = np.asarray(b)
    n = a.size
    concordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            concordant += (a[i] == a[j]) == (b[i] == b[j])
    return concordant / (n * (n - 1) // 2)


def adjusted_rand(a, b):
    """Adjusted Rand index from the contingency-table formula."""
    a = np.asarray(a)
    b = np.asarray(b)
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ua.size, ub.size), dtype=np.int64)
    for x, y in zip(ia, ib):
        table[x, y] += 1

    def comb2(v):
        return v * (v - 1) // 2

    sum_ij = sum(comb2(v) for v in table.ravel())
    sum_a = sum(comb2(v) for v in table.sum(axis=1))
    sum_b = sum(comb2(v) for v in table.sum(axis=0))
    total = comb2(a.size)
    expected = sum_a * sum_b / total
    maximum = (sum_a + sum_b) / 2
    if maximum == expected:
        return 1.0
    return (sum_ij - expected) / (maximum - expected)


def prim_reference(weights):
    """Straight-line Prim's algorithm: returns the MST edge weights."""
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    visited = [0]
    rest = set(range(1, n))
    picked = []
    while rest:
        best = (math.inf, None)
        for u in visited:
            for v in rest:
                if w[u, v] < best[0]:
                    best = (w[u, v], v)
        picked.append(best[0])
        visited.append(best[1])
        rest.remove(best[1])
    return picked


def random_fuzzy(rng, n, k, max_mass=1.0):
    """Random membership rows: Dirichlet weights scaled to row sums <= 1."""
    rows = rng.dirichlet(np.ones(k), size=n)
    mass = rng.uniform(0.2, max_mass, size=(n, 1))
    return rows * mass


def random_crisp(rng, n, k):
    return rng.integers(0, k, size=n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture
def three_blobs():
    from conceptalign import gaussian_blobs

    return gaussian_blobs(300, 3, dim=20, separation=10.0, sigma=1.0, seed=11)
