"""scikit-learn style wrapper around the game solver."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import Dataset, FunctionClass, LossSpec, WeightFamily, validate_dataset
from .oracles import ErmOracle
from .risk import ScalingRule
from .solver import Objective, solve_game


class MinimaxRegretRegressor(RegressorMixin, BaseEstimator):
    """Squared-loss regressor minimizing worst-case (scaled) regret over weightings.

    Parameters
    ----------
    objective : {"MRO", "SMRO", "DRO"}, default="MRO"
    function_class : {"linear", "interval"}, default="linear"
        Linear predictors in an l2 ball of radius ``radius``, or constants
        in ``[-radius, radius]``.
    radius : float, default=1.0
    T : int, default=500
        Number of game rounds.
    eta : float, optional
        Step size; defaults to the payoff-range rule.
    scaling : str, default="fast"
        SMRO scaling rule: ``fast``, ``slow`` or ``none``.
    weight_bounds : sequence of float, optional
        Declared per-column bounds B_w. Defaults to the column maxima.
    renormalize : bool, default=False
        Rescale weight columns to empirical mean one before solving.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,) or (1,)
    solution_ : GameSolution
    n_features_in_ : int
    """

    def __init__(self, objective="MRO", function_class="linear", radius=1.0, T=500, eta=None,
                 scaling="fast", weight_bounds=None, renormalize=False):
        self.objective = objective
        self.function_class = function_class
        self.radius = radius
        self.T = T
        self.eta = eta
        self.scaling = scaling
        self.weight_bounds = weight_bounds
        self.renormalize = renormalize

    def _make_class(self, d):
        if self.function_class == "linear":
            return FunctionClass.linear(d, self.radius)
        if self.function_class == "interval":
            return FunctionClass.interval(self.radius)
        raise ValueError(f"unknown function_class {self.function_class!r}")

    def fit(self, X, y, weight_matrix=None, weight_names=None):
        """Fit on features X, targets y and importance weights (n, |W|).

        With ``weight_matrix=None`` the family is the single weight w = 1
        and the fit reduces to constrained least squares.
        """
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        n, d = X.shape
        W = np.ones((n, 1)) if weight_matrix is None else check_array(weight_matrix, dtype=float)
        if W.shape[0] != n:
            raise ValueError(f"weight_matrix has {W.shape[0]} rows for {n} samples")
        names = tuple(weight_names) if weight_names is not None else tuple(
            f"w{j}" for j in range(W.shape[1]))
        bounds = W.max(axis=0) if self.weight_bounds is None else self.weight_bounds
        family = WeightFamily.from_bounds(names, bounds)
        fc = self._make_class(d)
        ds, family, _ = validate_dataset(Dataset(X, y, W, names), family, self.renormalize)
        reach = self.radius * (np.linalg.norm(X, axis=1).max() if fc.kind != "interval-constant"
                               else 1.0)
        top = reach + np.abs(y).max()
        loss = LossSpec("squared", bound=max(top * top, 1e-12), lipschitz=2 * top)
        scaling = ScalingRule(self.scaling) if self.objective == "SMRO" else None
        self.solution_ = solve_game(ds, family, ErmOracle(fc), loss,
                                    Objective(self.objective, scaling), T=self.T, eta=self.eta)
        self.coef_ = self.solution_.best_hypothesis.vector
        self.n_features_in_ = d
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if self.function_class == "interval":
            return np.full(X.shape[0], self.coef_[0])
        return X @ self.coef_
