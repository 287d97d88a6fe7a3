"""Two-player game solver for MRO, SMRO and DRO.

The weight player runs exponentiated gradient over the finite family; the
hypothesis player best-responds with one weighted ERM call per round.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog, minimize_scalar

from .core import FINITE, INTERVAL, Dataset, FunctionClass, Hypothesis, LossSpec, WeightFamily
from .oracles import ErmOracle
from .risk import RegretReport, ScalingRule, empirical_risks, losses, scaling_coefficients

logger = logging.getLogger(__name__)

MODES = ("MRO", "SMRO", "DRO")
DEFAULT_T = 2000


@dataclass(frozen=True)
class Objective:
    mode: str = "MRO"
    scaling: Optional[ScalingRule] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown objective {self.mode!r}; expected one of {MODES}")
        if self.mode == "SMRO" and self.scaling is None:
            object.__setattr__(self, "scaling", ScalingRule("fast"))

    def coefficients(self, dataset: Dataset, family: WeightFamily) -> np.ndarray:
        if self.mode != "SMRO":
            return np.ones(len(family))
        return scaling_coefficients(self.scaling, dataset, family)


def precompute_baselines(dataset: Dataset, family: WeightFamily, oracle, loss: LossSpec):
    """Per-weight ERM values R_w(f_w) and the minimizers f_w (one oracle call each)."""
    values, hyps = [], []
    for j, name in enumerate(family.names):
        col = dataset.weight_matrix[:, j]
        if not np.any(col > 0):
            raise ValueError(f"weight column {name!r} is identically zero")
        h = oracle(col, dataset, loss)
        hyps.append(h)
        values.append(float(col @ losses(h, dataset, loss) / dataset.n))
    return np.array(values), hyps


def _payoffs(risks, mode, baselines, scaling):
    if mode == "DRO":
        return np.asarray(risks, dtype=float)
    out = np.asarray(risks, dtype=float) - baselines
    if mode == "SMRO":
        out = out / scaling
    return out


def payoff(hypothesis: Hypothesis, weight_index: int, dataset: Dataset, loss: LossSpec,
           objective: Objective, baselines, scaling=None) -> float:
    """Game payoff of one (hypothesis, weight) pair under the objective's mode."""
    col = dataset.weight_matrix[:, weight_index]
    risk = float(col @ losses(hypothesis, dataset, loss) / dataset.n)
    if objective.mode == "DRO":
        return risk
    regret = risk - baselines[weight_index]
    if objective.mode == "SMRO":
        return regret / scaling[weight_index]
    return regret


def default_eta(B: float, T: int, family_size: int) -> float:
    """Step size sqrt(ln|W| / (B^2 T)); zero for a single weight."""
    if T < 1 or not B > 0 or family_size < 1:
        raise ValueError("need T >= 1, B > 0 and a nonempty family")
    if family_size == 1:
        return 0.0
    return math.sqrt(math.log(family_size) / (B * B * T))


def _softmax(logits) -> np.ndarray:
    e = np.exp(logits - logits.max())
    return e / e.sum()


def eg_update(rho, payoffs, eta: float) -> np.ndarray:
    """One exponentiated-gradient ascent step: rho'(w) ~ rho(w) exp(eta * payoff_w)."""
    with np.errstate(divide="ignore"):
        logits = np.log(np.asarray(rho, dtype=float)) + eta * np.asarray(payoffs, dtype=float)
    return _softmax(logits)


@dataclass(frozen=True, eq=False)
class GameSolution:
    mode: str
    iterate_hypotheses: tuple
    rho_history: np.ndarray
    rho_final: np.ndarray
    sup_payoffs: np.ndarray
    expected_payoffs: np.ndarray
    mixture_value: float
    best_iterate: int
    per_weight_baselines: np.ndarray
    baseline_hypotheses: tuple
    scaling: np.ndarray
    payoff_range: float
    eta: float
    T: int
    weight_names: tuple = ()
    gap_certificate: float = float("nan")
    exact_minimizer: Optional[int] = None
    exact_value: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    @property
    def best_hypothesis(self) -> Hypothesis:
        return self.iterate_hypotheses[self.best_iterate]

    @property
    def best_value(self) -> float:
        return float(self.sup_payoffs[self.best_iterate])

    def to_dict(self) -> dict:
        best = self.best_hypothesis
        d = {
            "objective": self.mode,
            "eta": self.eta,
            "T": self.T,
            "weight_names": list(self.weight_names),
            "rho_final": [float(v) for v in self.rho_final],
            "per_weight_baselines": [float(v) for v in self.per_weight_baselines],
            "scaling": [float(v) for v in self.scaling],
            "payoff_range": self.payoff_range,
            "mixture_value": self.mixture_value,
            "gap_certificate": self.gap_certificate,
            "best_iterate": {
                "index": self.best_iterate,
                "objective_value": self.best_value,
                "hypothesis": best.to_dict(),
            },
        }
        if self.exact_minimizer is not None:
            d["exact_minimizer"] = {"index": self.exact_minimizer,
                                    "objective_value": self.exact_value}
        if self.metadata:
            d["metadata"] = dict(self.metadata)
        return d


def _finite_payoff_matrix(dataset, loss, function_class, mode, baselines, scaling):
    rows = [_payoffs(empirical_risks(h, dataset, loss), mode, baselines, scaling)
            for h in function_class.hypotheses]
    return np.array(rows)


def solve_game(dataset: Dataset, family: WeightFamily, oracle: ErmOracle, loss: LossSpec,
               objective: Objective = Objective(), T: int = DEFAULT_T,
               eta: Optional[float] = None, baselines=None) -> GameSolution:
    """Run T rounds of EG (weights) against best response (hypotheses).

    ``baselines`` may pass a precomputed ``(values, hypotheses)`` pair from
    :func:`precompute_baselines`. The default step size uses the payoff
    range: ``B * loss.bound`` for MRO/DRO and ``max_w B_w / c_w * loss.bound``
    for SMRO.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if tuple(dataset.weight_names) != tuple(family.names):
        raise ValueError("dataset columns do not match weight family")
    m = len(family)
    if baselines is None:
        base_vals, base_hyps = precompute_baselines(dataset, family, oracle, loss)
    else:
        base_vals, base_hyps = np.asarray(baselines[0], dtype=float), list(baselines[1])
    c = objective.coefficients(dataset, family)
    mode = objective.mode
    if mode == "SMRO":
        payoff_range = float(np.max(np.asarray(family.per_weight_bound) / c)) * loss.bound
    else:
        payoff_range = family.family_bound * loss.bound
    if eta is None:
        eta = default_eta(payoff_range, T, m) if payoff_range > 0 else 0.0
    W = dataset.weight_matrix
    n = dataset.n
    finite = oracle.function_class.kind == FINITE
    cache = {}

    def risks_of(h):
        if finite:
            if h.index not in cache:
                cache[h.index] = losses(h, dataset, loss) @ W / n
            return cache[h.index]
        return losses(h, dataset, loss) @ W / n

    rounds = 1 if m == 1 else T
    if m == 1:
        eta = 0.0
    iterates = []
    rho_hist = np.empty((rounds, m))
    sup_p = np.empty(rounds)
    exp_p = np.empty(rounds)
    logw = np.zeros(m)
    rho = np.full(m, 1.0 / m)
    for t in range(rounds):
        rho_hist[t] = rho
        omega = W @ (rho / c) if mode == "SMRO" else W @ rho
        f = oracle(omega, dataset, loss)
        p = _payoffs(risks_of(f), mode, base_vals, c)
        if not np.all(np.isfinite(p)):
            raise FloatingPointError(f"non-finite payoff at round {t}")
        iterates.append(f)
        sup_p[t] = p.max()
        exp_p[t] = rho @ p
        logw = logw + eta * p
        rho = _softmax(logw)
    mixture = float(sup_p.mean())
    best = int(np.argmin(sup_p))
    sol = GameSolution(
        mode=mode, iterate_hypotheses=tuple(iterates), rho_history=rho_hist, rho_final=rho,
        sup_payoffs=sup_p, expected_payoffs=exp_p, mixture_value=mixture, best_iterate=best,
        per_weight_baselines=base_vals, baseline_hypotheses=tuple(base_hyps), scaling=c,
        payoff_range=payoff_range, eta=float(eta), T=int(T), weight_names=tuple(family.names),
        metadata={"eta_range": "max_w B_w/c_w * loss_bound" if mode == "SMRO"
                  else "B * loss_bound"},
    )
    gap, exact_idx, exact_val = _gap(sol, dataset, loss, oracle.function_class)
    object.__setattr__(sol, "gap_certificate", gap)
    object.__setattr__(sol, "exact_minimizer", exact_idx)
    object.__setattr__(sol, "exact_value", exact_val)
    logger.debug("solve_game %s: T=%d eta=%.3g mixture=%.6g gap=%.3g", mode, T, eta, mixture, gap)
    return sol


def _gap(sol: GameSolution, dataset, loss, function_class: FunctionClass):
    if function_class.kind == FINITE:
        M = _finite_payoff_matrix(dataset, loss, function_class, sol.mode,
                                  sol.per_weight_baselines, sol.scaling)
        worst = M.max(axis=1)
        idx = int(np.argmin(worst))
        return sol.mixture_value - float(worst[idx]), idx, float(worst[idx])
    return sol.mixture_value - float(sol.expected_payoffs.max()), None, None


def gap_certificate(solution: GameSolution, dataset: Dataset, family: WeightFamily,
                    oracle: ErmOracle, loss: LossSpec, objective: Objective) -> float:
    """Upper bound on how far the iterate mixture is from the game value.

    Finite classes: mixture value minus the exact pure minimax value found by
    enumeration. Otherwise: mixture value minus the best lower bound
    ``max_t E_{rho_t} payoff(f_t)`` supplied by the best responses.
    """
    if objective.mode != solution.mode:
        raise ValueError("objective does not match solution")
    return _gap(solution, dataset, loss, oracle.function_class)[0]


def regret_report(solution: GameSolution, dataset: Dataset, loss: LossSpec,
                  hypothesis: Optional[Hypothesis] = None) -> RegretReport:
    h = solution.best_hypothesis if hypothesis is None else hypothesis
    return RegretReport.from_risks(dataset.weight_names, empirical_risks(h, dataset, loss),
                                   solution.per_weight_baselines)


def mixed_game_value(payoff_matrix):
    """Value of the zero-sum matrix game min_P max_rho P^T M rho (rows minimize).

    Returns ``(value, row_strategy, column_strategy)``; both sides come from
    linear programs solved with HiGHS.
    """
    M = np.atleast_2d(np.asarray(payoff_matrix, dtype=float))
    if not np.all(np.isfinite(M)):
        raise ValueError("payoff matrix has non-finite entries")
    k, m = M.shape
    # rows: minimize v s.t. M^T p <= v, sum p = 1
    res = linprog(np.r_[np.zeros(k), 1.0],
                  A_ub=np.c_[M.T, -np.ones(m)], b_ub=np.zeros(m),
                  A_eq=np.r_[np.ones(k), 0.0][None, :], b_eq=[1.0],
                  bounds=[(0, None)] * k + [(None, None)], method="highs")
    # columns: maximize u s.t. M q >= u, sum q = 1
    res2 = linprog(np.r_[np.zeros(m), -1.0],
                   A_ub=np.c_[-M, np.ones(k)], b_ub=np.zeros(k),
                   A_eq=np.r_[np.ones(m), 0.0][None, :], b_eq=[1.0],
                   bounds=[(0, None)] * m + [(None, None)], method="highs")
    if res.status != 0 or res2.status != 0:
        raise RuntimeError(f"matrix game LP failed: {res.message} / {res2.message}")
    p = np.clip(res.x[:k], 0, None)
    q = np.clip(res2.x[:m], 0, None)
    p /= p.sum()
    q /= q.sum()
    return float(np.max(p @ M)), p, q


def bounded_weight_sup(diffs, B: float) -> float:
    """sup of (1/n) sum w_i d_i over 0 <= w_i <= B with mean(w) = 1.

    Evaluated through its dual inf_eta eta + (B/n) sum (d_i - eta)_+, whose
    minimizer is an order statistic of d (the ceil(n(1 - 1/B))-th); every
    order statistic is tried and the smallest minimizer kept.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    s = np.sort(np.asarray(diffs, dtype=float))
    n = s.shape[0]
    tail = np.r_[np.cumsum(s[::-1])[::-1], 0.0]
    k = np.arange(n)
    # objective at eta = s_k; ties above s_k contribute zero
    vals = s + (B / n) * (tail[k + 1] - (n - 1 - k) * s)
    return float(vals[int(np.argmin(vals))])


def worst_case_regret_bounded_family(hypothesis: Hypothesis, dataset: Dataset, loss: LossSpec,
                                     candidate_class: FunctionClass, B: float,
                                     grid: int = 401) -> float:
    """Worst regret over all weights bounded by B with unit mean (closed form).

    For each comparator f' the inner sup over weights is a CVaR-type dual;
    the outer sup over f' is by enumeration (finite) or grid plus bounded
    refinement (interval).
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    lf = losses(hypothesis, dataset, loss)

    def value(h):
        return bounded_weight_sup(lf - losses(h, dataset, loss), B)

    if candidate_class.kind == FINITE:
        return max(value(h) for h in candidate_class.hypotheses)
    if candidate_class.kind != INTERVAL:
        raise ValueError("candidate class must be finite or interval-constant")
    C = candidate_class.radius
    cs = np.linspace(-C, C, grid)
    vals = np.array([value(candidate_class.hypothesis(c)) for c in cs])
    i = int(np.argmax(vals))
    lo, hi = cs[max(i - 1, 0)], cs[min(i + 1, grid - 1)]
    res = minimize_scalar(lambda c: -value(candidate_class.hypothesis(c)), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-12})
    return float(max(vals[i], -res.fun))
