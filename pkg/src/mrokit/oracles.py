"""Weighted ERM oracles for the shipped function classes.

Each oracle returns ``argmin_f sum_i omega_i * loss(z_i, f(z_i))`` over its
class. Finite and interval oracles are exact; the ball-constrained least
squares oracle solves for the Lagrange multiplier by bracketed root finding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import norm as norm2
from scipy.optimize import brentq

from .core import (FINITE, INTERVAL, LINEAR, ORACLE_TOLERANCE, Dataset, FunctionClass,
                   Hypothesis, LossSpec)


@dataclass(frozen=True, eq=False)
class ErmRequest:
    per_sample_weights: np.ndarray
    dataset: Dataset
    loss: LossSpec
    function_class: FunctionClass
    tolerance: float = ORACLE_TOLERANCE

    def __post_init__(self):
        w = np.asarray(self.per_sample_weights, dtype=float).reshape(-1)
        if w.shape[0] != self.dataset.n:
            raise ValueError(f"{w.shape[0]} sample weights for {self.dataset.n} samples")
        if not np.all(np.isfinite(w)):
            raise ValueError("non-finite sample weights")
        if np.any(w < 0):
            raise ValueError("sample weights must be nonnegative")
        if not np.any(w > 0):
            raise ValueError("at least one sample weight must be positive")
        object.__setattr__(self, "per_sample_weights", w)


def finite_loss_matrix(dataset: Dataset, loss: LossSpec, function_class: FunctionClass):
    """n x |F| matrix of per-sample losses for every member of a finite class."""
    return np.column_stack([loss(dataset.labels, h.predict_dataset(dataset))
                            for h in function_class.hypotheses])


def erm_finite(request: ErmRequest, loss_matrix=None) -> Hypothesis:
    fc = request.function_class
    if fc.kind != FINITE:
        raise ValueError("erm_finite needs a finite class")
    L = loss_matrix if loss_matrix is not None else finite_loss_matrix(request.dataset,
                                                                       request.loss, fc)
    risks = request.per_sample_weights @ L
    # np.argmin returns the first minimizer: lowest index wins ties
    return fc.hypotheses[int(np.argmin(risks))]


def erm_interval_mean(request: ErmRequest) -> Hypothesis:
    fc = request.function_class
    if fc.kind != INTERVAL or request.loss.kind != "squared":
        raise ValueError("erm_interval_mean needs an interval class and squared loss")
    w = request.per_sample_weights
    mean = float(w @ request.dataset.labels / w.sum())
    return fc.hypothesis(float(np.clip(mean, -fc.radius, fc.radius)))


def ball_constrained_least_squares(X, y, weights, radius, tol=ORACLE_TOLERANCE):
    """Minimize sum_i w_i (x_i . beta - y_i)^2 subject to ||beta||_2 <= radius.

    Returns ``(beta, lam)`` where ``lam >= 0`` is the multiplier in
    ``X^T W (X beta - y) + lam * beta = 0``. Rank-deficient designs get the
    minimum-norm solution.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise ValueError("non-finite inputs to least squares")
    # Everything is solved at unit scale so that extreme inputs cannot square
    # into under/overflow. With X = sx Xs, y = sy ys, w = sw ws and
    # gamma = beta sx / sy, the ball becomes ||gamma|| <= rel = radius sx / sy.
    sw, sx, sy = (np.abs(v).max(initial=0.0) or 1.0 for v in (w, X, y))
    Xs, ys, ws = X / sx, y / sy, w / sw
    with np.errstate(over="ignore"):
        rel = radius * sx / sy  # inf means the ball cannot bind
    evals, U = np.linalg.eigh(Xs.T @ (ws[:, None] * Xs))
    c = U.T @ (Xs.T @ (ws * ys))
    sa = evals.max(initial=0.0)
    if sa <= 0:
        return np.zeros(X.shape[1]), 0.0
    evals, c = evals / sa, c / sa
    # eigh is accurate to about eps * max eigenvalue (the matrix_rank tolerance);
    # X^T W y lies in the range of X^T W X, so its null-space part is rounding noise
    null = evals <= evals.size * np.finfo(float).eps
    evals[null], c[null] = 0.0, 0.0

    # unconstrained minimum-norm solution
    # (scipy's norm goes through BLAS nrm2, which does not underflow on tiny vectors)
    gamma0 = np.zeros_like(c)
    gamma0[~null] = c[~null] / evals[~null]
    if norm2(gamma0) <= rel:
        return (U @ gamma0 * sy) / sx, 0.0

    # The multiplier (in units of sa) is nu / k with k = min(rel, 1); delta =
    # c / (evals k + nu) then has norm target = rel / k at the root, and both nu
    # and delta stay of order one however extreme rel is.
    k = min(rel, 1.0)
    target = 1.0 if rel < 1 else rel
    live = c != 0

    def secular(nu):
        # 1/target - 1/||delta||: finite at nu = 0 and close to linear in nu
        denom = evals[live] * k + nu
        if np.any(denom <= 0):
            return 1.0 / target
        with np.errstate(over="ignore"):
            n = norm2(c[live] / denom) if np.all(np.isfinite(c[live] / denom)) else np.inf
        return 1.0 / target - 1.0 / n

    hi = norm2(c) / target
    while secular(hi) > 0:
        hi *= 2.0
    # accuracy comes from rtol; xtol only needs to be positive (roots can be far below hi)
    nu = brentq(secular, 0.0, hi, xtol=5e-324, rtol=4 * np.finfo(float).eps, maxiter=500)
    delta = np.zeros_like(c)
    delta[live] = c[live] / (evals[live] * k + nu)
    beta = U @ delta * radius if rel < 1 else (U @ delta * sy) / sx
    norm = norm2(beta)
    if norm > radius:
        beta *= radius / norm
    lam = nu * sa * sw * sx * (sy / radius if rel < 1 else sx)
    return beta, float(lam)


def erm_linear_l2(request: ErmRequest) -> Hypothesis:
    fc = request.function_class
    if fc.kind != LINEAR or request.loss.kind != "squared":
        raise ValueError("erm_linear_l2 needs a linear-l2-ball class and squared loss")
    ds = request.dataset
    if ds.dim != fc.dim:
        raise ValueError(f"class dimension {fc.dim} does not match data dimension {ds.dim}")
    beta, _ = ball_constrained_least_squares(ds.features, ds.labels, request.per_sample_weights,
                                             fc.radius, request.tolerance)
    return fc.hypothesis(beta, tol=request.tolerance)


_DISPATCH = {FINITE: erm_finite, INTERVAL: erm_interval_mean, LINEAR: erm_linear_l2}


class ErmOracle:
    """Callable binding a function class to its weighted ERM routine."""

    def __init__(self, function_class: FunctionClass, tolerance: float = ORACLE_TOLERANCE):
        self.function_class = function_class
        self.tolerance = tolerance
        self._solve = _DISPATCH[function_class.kind]
        self._cached = None

    def __call__(self, per_sample_weights, dataset: Dataset, loss: LossSpec) -> Hypothesis:
        request = ErmRequest(per_sample_weights, dataset, loss, self.function_class,
                             self.tolerance)
        if self.function_class.kind != FINITE:
            return self._solve(request)
        # datasets are immutable, so the loss matrix can be reused across rounds
        c = self._cached
        if c is None or c[0] is not dataset or c[1] is not loss:
            c = self._cached = (dataset, loss,
                                finite_loss_matrix(dataset, loss, self.function_class))
        return erm_finite(request, c[2])

    def __repr__(self):
        return f"ErmOracle({self.function_class.kind})"
