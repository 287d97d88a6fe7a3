"""Independent brute-force oracles used to check the library's fast paths."""
from __future__ import annotations

import itertools

import numpy as np

from mrokit import Dataset, FunctionClass, WeightFamily


def vertex_bounded_weight_sup(d, B):
    """max (1/n) sum w_i d_i over {0 <= w_i <= B, sum w_i = n} by vertex enumeration.

    Every vertex has at most one coordinate strictly between 0 and B.
    """
    d = np.asarray(d, dtype=float)
    n = d.shape[0]
    best = -np.inf
    for k in range(n + 1):
        rest = n - k * B
        if rest < -1e-12:
            break
        for top in itertools.combinations(range(n), k):
            w = np.zeros(n)
            w[list(top)] = B
            if abs(rest) <= 1e-12:
                best = max(best, w @ d / n)
                continue
            if rest > B + 1e-12:
                continue
            for j in set(range(n)) - set(top):
                w2 = w.copy()
                w2[j] = rest
                best = max(best, w2 @ d / n)
    return best


def support_enumeration_value(M):
    """Value of min_p max_q p^T M q by enumerating equal-size supports."""
    M = np.asarray(M, dtype=float)
    k, m = M.shape
    best = None
    for s in range(1, min(k, m) + 1):
        for rows in itertools.combinations(range(k), s):
            for cols in itertools.combinations(range(m), s):
                sub = M[np.ix_(rows, cols)]
                # p^T sub = v 1, sum p = 1
                A = np.zeros((s + 1, s + 1))
                A[:s, :s] = sub.T
                A[:s, s] = -1.0
                A[s, :s] = 1.0
                rhs = np.r_[np.zeros(s), 1.0]
                try:
                    sol = np.linalg.solve(A, rhs)
                except np.linalg.LinAlgError:
                    continue
                p_sub, v = sol[:s], sol[s]
                if np.any(p_sub < -1e-10):
                    continue
                p = np.zeros(k)
                p[list(rows)] = p_sub
                # p must be a min-max strategy: all columns at most v
                if np.max(p @ M) <= v + 1e-9:
                    best = v if best is None else min(best, v)
    return best


def random_finite_game(rng, max_f=8, max_w=8, max_n=12, B_choices=(1.0, 1.5, 2.0, 4.0)):
    """Dataset whose finite class realizes an arbitrary loss matrix in [0, 1].

    Every sample has its own tag; hypothesis j predicts L[i, j] on tag i + 1,
    so with label 0 and absolute loss the per-sample losses equal L.
    """
    k = int(rng.integers(1, max_f + 1))
    m = int(rng.integers(1, max_w + 1))
    n = int(rng.integers(2, max_n + 1))
    L = rng.uniform(0, 1, size=(n, k))
    B = float(rng.choice(B_choices))
    W = rng.uniform(0, 1, size=(n, m)) ** 3 + 1e-3
    W = W / W.mean(axis=0)
    W = np.minimum(W, B)
    fc = FunctionClass.finite([{"by_tag": {i + 1: L[i, j] for i in range(n)}} for j in range(k)])
    names = tuple(f"w{j}" for j in range(m))
    ds = Dataset(np.zeros((n, 0)), np.zeros(n), W, names, tags=np.arange(1, n + 1))
    family = WeightFamily.from_bounds(names, W.max(axis=0))
    return ds, family, fc, L


def loop_weighted_risk(h, ds, loss, j):
    """Sample-by-sample weighted risk, written without vectorization."""
    total = 0.0
    for s, w in zip(ds.samples, ds.weight_matrix[:, j]):
        total += w * float(loss([s.label], [h(s)])[0])
    return total / ds.n
