"""Synthetic scenarios with known population risks, and the rate-sweep driver.

Each scenario can draw a training set from P_0 (with its weight matrix),
evaluate population risks ``R_w(f)`` in closed form where one exists, and
draw importance-weighted Monte Carlo samples otherwise.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import (FINITE, INTERVAL, LINEAR, Dataset, FunctionClass, Hypothesis, LossSpec,
                   WeightFamily, validate_dataset)
from .oracles import ErmOracle, ball_constrained_least_squares
from .risk import ScalingRule, population_regret_report, population_risk
from .solver import Objective, solve_game

logger = logging.getLogger(__name__)


class Problem(NamedTuple):
    dataset: Dataset
    family: WeightFamily
    function_class: FunctionClass
    loss: LossSpec
    scenario: object = None
    twin: Optional[Dataset] = None


class Scenario:
    """Interface shared by the synthetic generators."""

    kind = "abstract"
    family: WeightFamily
    function_class: FunctionClass
    loss: LossSpec

    def sample(self, n: int, seed) -> Problem:
        raise NotImplementedError

    def exact_risk(self, hypothesis: Hypothesis, weight_index: int) -> float:
        raise ValueError(f"scenario {self.kind!r} has no closed-form population risk")

    def sample_weighted(self, weight_index: int, N: int, rng):
        raise NotImplementedError

    def best_in_class(self, weight_index: int) -> Hypothesis:
        raise NotImplementedError

    def dro_value(self) -> float:
        raise ValueError(f"scenario {self.kind!r} has no closed-form DRO value")

    def mro_value(self) -> float:
        raise ValueError(f"scenario {self.kind!r} has no closed-form MRO value")


def _finite_argmin(function_class, risk_fn):
    risks = [risk_fn(h) for h in function_class.hypotheses]
    return function_class.hypotheses[int(np.argmin(risks))]


@dataclass
class DiscreteScenario(Scenario):
    """Target distributions with finite support, mixed equally (or by ``mix``) into P_0.

    ``components[j]`` lists ``(features, label, probability)`` atoms of
    P_j. Atoms of P_j carry tag j + 1, so w_j(z) = 1{tag = j+1} / mix_j.
    """

    components: list
    function_class: FunctionClass
    loss: LossSpec
    names: Optional[Sequence[str]] = None
    mix: Optional[Sequence[float]] = None
    kind: str = "discrete"

    def __post_init__(self):
        m = len(self.components)
        if m == 0:
            raise ValueError("need at least one component")
        self.names = tuple(self.names) if self.names else tuple(f"w{j + 1}" for j in range(m))
        mix = np.full(m, 1.0 / m) if self.mix is None else np.asarray(self.mix, dtype=float)
        if mix.shape != (m,) or np.any(mix <= 0) or abs(mix.sum() - 1) > 1e-12:
            raise ValueError("mixture probabilities must be positive and sum to one")
        self.mix = mix
        self._atoms = []
        for j, comp in enumerate(self.components):
            X = np.array([np.atleast_1d(np.asarray(a[0], dtype=float)) for a in comp])
            X = X.reshape(len(comp), -1)
            y = np.array([a[1] for a in comp], dtype=float)
            p = np.array([a[2] for a in comp], dtype=float)
            if abs(p.sum() - 1) > 1e-12 or np.any(p < 0):
                raise ValueError(f"component {j} probabilities must sum to one")
            self._atoms.append((X, y, np.full(len(comp), j + 1), p))
        self.family = WeightFamily.from_bounds(self.names, 1.0 / self.mix)

    def exact_risk(self, hypothesis, weight_index):
        X, y, tags, p = self._atoms[weight_index]
        return float(p @ self.loss(y, hypothesis.predict(X, tags)))

    def best_in_class(self, weight_index):
        fc = self.function_class
        X, y, tags, p = self._atoms[weight_index]
        if fc.kind == FINITE:
            return _finite_argmin(fc, lambda h: self.exact_risk(h, weight_index))
        if self.loss.kind != "squared":
            raise ValueError("closed-form class minimizer needs squared loss")
        if fc.kind == INTERVAL:
            return fc.hypothesis(float(np.clip(p @ y, -fc.radius, fc.radius)))
        beta, _ = ball_constrained_least_squares(X, y, p, fc.radius)
        return fc.hypothesis(beta)

    def _worst(self, h, regret: bool):
        m = len(self.components)
        base = [self.exact_risk(self.best_in_class(j), j) if regret else 0.0 for j in range(m)]
        return max(self.exact_risk(h, j) - base[j] for j in range(m))

    def dro_value(self):
        if self.function_class.kind != FINITE:
            return super().dro_value()
        return min(self._worst(h, False) for h in self.function_class.hypotheses)

    def mro_value(self):
        if self.function_class.kind != FINITE:
            return super().mro_value()
        return min(self._worst(h, True) for h in self.function_class.hypotheses)

    def _weights(self, tags):
        return np.column_stack([(tags == j + 1) / self.mix[j] for j in range(len(self.mix))])

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)
        comp = rng.choice(len(self.mix), size=n, p=self.mix)
        rows, labels = [], []
        for j in comp:
            X, y, _, p = self._atoms[j]
            k = rng.choice(len(p), p=p)
            rows.append(X[k])
            labels.append(y[k])
        tags = comp + 1
        ds = Dataset(np.array(rows).reshape(n, -1), labels, self._weights(tags), self.names,
                     tags=tags)
        return Problem(ds, self.family, self.function_class, self.loss, self)

    def sample_weighted(self, weight_index, N, rng):
        X, y, tags, p = self._atoms[weight_index]
        k = rng.choice(len(p), size=N, p=p)
        return X[k], y[k], tags[k], np.ones(N)

    def exact_twin(self) -> Dataset:
        """Finite dataset whose empirical weighted risks equal the population risks.

        Every atom is repeated in proportion to its P_0 probability (rational
        approximation with denominator at most 10^6).
        """
        fracs = []
        for j, (X, y, tags, p) in enumerate(self._atoms):
            mj = Fraction(self.mix[j]).limit_denominator(10 ** 6)
            fracs.extend((j, k, mj * Fraction(pk).limit_denominator(10 ** 6))
                         for k, pk in enumerate(p) if pk > 0)
        denom = math.lcm(*(f.denominator for _, _, f in fracs))
        rows, labels, tags = [], [], []
        for j, k, f in fracs:
            count = int(f * denom)
            X, y, _, _ = self._atoms[j]
            rows.extend([X[k]] * count)
            labels.extend([y[k]] * count)
            tags.extend([j + 1] * count)
        tags = np.array(tags)
        return Dataset(np.array(rows).reshape(len(labels), -1), labels, self._weights(tags),
                       self.names, tags=tags)


PROP1_RISKS = {"R1(f1)": 0.04, "R1(f2)": 0.25, "R2(f1)": 0.29, "R2(f2)": 0.26}


def prop1_scenario() -> DiscreteScenario:
    """P_1 a point mass at 0.1, P_2 = Bernoulli(0.5); candidates 0.3 and 0.6."""
    return DiscreteScenario(
        components=[[((), 0.1, 1.0)], [((), 0.0, 0.5), ((), 1.0, 0.5)]],
        function_class=FunctionClass.finite([0.3, 0.6]),
        loss=LossSpec("squared", bound=1.0, lipschitz=2.0),
        names=("P1", "P2"), kind="prop1")


def build_prop1(n_per_component: int, seed=0) -> Problem:
    """Sampled equal mixture of P_1 and P_2 (2 * n_per_component draws) plus its exact twin."""
    if n_per_component < 1:
        raise ValueError("n_per_component must be >= 1")
    sc = prop1_scenario()
    prob = sc.sample(2 * n_per_component, seed)
    return prob._replace(twin=sc.exact_twin())


@dataclass(frozen=True)
class Example2:
    eps: float
    risk: np.ndarray
    regret: np.ndarray
    mro_selection: int
    dro_selection: int
    twin: Dataset
    function_class: FunctionClass
    family: WeightFamily
    loss: LossSpec


def build_example2_matrix(eps: float = 0.01) -> Example2:
    """Risk table of three hypotheses under two distributions, with selections.

    The twin dataset has one sample per distribution (label 0) and
    tag-indexed hypotheses predicting their risk, so the absolute loss
    reproduces the table exactly.
    """
    risk = np.array([[0.0, 1.0], [0.5, 0.9], [0.5 + eps, 0.4]])
    if risk.max() > 1:
        raise ValueError("eps must keep risks within [0, 1]")
    regret = risk - risk.min(axis=0)
    mro = int(np.argmin(regret.max(axis=1)))
    dro = int(np.argmin(risk.max(axis=1)))
    fc = FunctionClass.finite([{"by_tag": {1: r[0], 2: r[1]}} for r in risk])
    twin = Dataset(np.zeros((2, 0)), [0.0, 0.0], [[2.0, 0.0], [0.0, 2.0]], ("P1", "P2"),
                   tags=[1, 2])
    family = WeightFamily(("P1", "P2"), (2.0, 2.0), 2.0)
    return Example2(eps, risk, regret, mro, dro, twin, fc, family,
                    LossSpec("absolute", bound=1.0, lipschitz=1.0))


@dataclass
class DroSlowScenario(Scenario):
    """Two shifted Rademacher-noise means, x = mu_i +- 1, constants in [-C, C]."""

    mu1: float = 1.5
    mu2: float = 0.5
    C: float = 2.0
    kind: str = "dro-slow"

    def __post_init__(self):
        if not self.C > 0 or self.C < self.mu1 + self.mu2:
            raise ValueError(f"need C >= mu1 + mu2 = {self.mu1 + self.mu2}, got C = {self.C}")
        self.mus = np.array([self.mu1, self.mu2], dtype=float)
        self.function_class = FunctionClass.interval(self.C)
        top = self.C + np.abs(self.mus).max() + 1.0
        self.loss = LossSpec("squared", bound=top * top, lipschitz=2 * top)
        self.family = WeightFamily(("w1", "w2"), (2.0, 2.0), 2.0)

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)
        tags = rng.integers(1, 3, size=n)
        if np.unique(tags).size < 2:
            raise ValueError(f"sample of size {n} missed a component")
        x = self.mus[tags - 1] + rng.choice([-1.0, 1.0], size=n)
        W = np.column_stack([2.0 * (tags == 1), 2.0 * (tags == 2)])
        raw = Dataset(np.zeros((n, 0)), x, W, self.family.names, tags=tags)
        ds, fam, _ = validate_dataset(raw, self.family, renormalize=True)
        return Problem(ds, fam, self.function_class, self.loss, self)

    def exact_risk(self, hypothesis, weight_index):
        c = hypothesis.params[0]
        return float((c - self.mus[weight_index]) ** 2 + 1.0)

    def best_in_class(self, weight_index):
        return self.function_class.hypothesis(float(np.clip(self.mus[weight_index],
                                                            -self.C, self.C)))

    def _midpoint(self, mus):
        return float(np.clip(mus.mean(), -self.C, self.C))

    def dro_value(self):
        c = self._midpoint(self.mus)
        return float(np.max((c - self.mus) ** 2) + 1.0)

    def mro_value(self):
        targets = np.clip(self.mus, -self.C, self.C)
        c = self._midpoint(targets)
        return float(np.max((c - targets) ** 2))

    def sample_weighted(self, weight_index, N, rng):
        x = self.mus[weight_index] + rng.choice([-1.0, 1.0], size=N)
        return np.zeros((N, 0)), x, np.full(N, weight_index + 1), np.ones(N)


def _tilt_moments(power: int):
    """Mean and second moment of u when (1+u)/2 ~ Beta(power+1, 1) on [-1, 1]."""
    k = power
    es, es2 = (k + 1) / (k + 2), (k + 1) / (k + 3)
    return 2 * es - 1, 4 * es2 - 4 * es + 1


@dataclass
class LinRegCovShift(Scenario):
    """Well-specified linear regression, x = u / sqrt(d) with u ~ U[-1, 1]^d.

    Labels are ``x . beta_star + nu`` with ``nu ~ U[-noise, noise]``. Each
    shift tilts one coordinate: w(x) = (k+1) ((1 + u_j) / 2)^k, bounded by
    k + 1 and with unit mean under P_0. The family always starts with w0 = 1.
    """

    d: int = 5
    beta_star: Optional[Sequence[float]] = None
    noise: float = 0.5
    shifts: Sequence[dict] = field(default_factory=lambda: [{"name": "tilt0", "coordinate": 0,
                                                             "power": 19}])
    radius: float = 1.0
    kind: str = "linreg-covshift"

    def __post_init__(self):
        if self.beta_star is None:
            self.beta_star = np.linspace(1.0, -1.0, self.d) if self.d > 1 else np.ones(1)
            self.beta_star = 0.8 * self.beta_star / np.linalg.norm(self.beta_star)
        self.beta_star = np.asarray(self.beta_star, dtype=float)
        if self.beta_star.shape != (self.d,):
            raise ValueError("beta_star has the wrong dimension")
        if np.linalg.norm(self.beta_star) > min(1.0, self.radius) + 1e-12:
            raise ValueError("need ||beta_star|| <= 1 and inside the class ball")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        names, bounds = ["w0"], [1.0]
        for s in self.shifts:
            unknown = set(s) - {"name", "coordinate", "power"}
            if unknown:
                raise ValueError(f"unknown shift keys {sorted(unknown)}")
            if not 0 <= s["coordinate"] < self.d or int(s["power"]) < 0:
                raise ValueError(f"invalid shift {s}")
            names.append(s.get("name", f"tilt{len(names)}"))
            bounds.append(float(int(s["power"]) + 1))
        self.family = WeightFamily.from_bounds(names, bounds)
        self.label_bound = float(np.linalg.norm(self.beta_star)) + self.noise
        top = self.radius + self.label_bound
        self.loss = LossSpec("squared", bound=top * top, lipschitz=2 * top)
        self.function_class = FunctionClass.linear(self.d, self.radius)
        self.sigma_p0 = np.eye(self.d) / (3.0 * self.d)
        self._sigmas = [self.sigma_p0]
        for s in self.shifts:
            second = np.full(self.d, 1.0 / 3.0)
            second[s["coordinate"]] = _tilt_moments(int(s["power"]))[1]
            self._sigmas.append(np.diag(second) / self.d)

    def _weights(self, U):
        cols = [np.ones(U.shape[0])]
        for s in self.shifts:
            k = int(s["power"])
            cols.append((k + 1) * ((1.0 + U[:, s["coordinate"]]) / 2.0) ** k)
        return np.column_stack(cols)

    def _draw(self, n, rng):
        U = rng.uniform(-1.0, 1.0, size=(n, self.d))
        X = U / math.sqrt(self.d)
        y = X @ self.beta_star + rng.uniform(-self.noise, self.noise, size=n)
        return U, X, y

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)
        U, X, y = self._draw(n, rng)
        W = self._weights(U)
        ds = Dataset(X, y, np.minimum(W, np.asarray(self.family.per_weight_bound)),
                     self.family.names, label_bound=self.label_bound)
        ds, fam, _ = validate_dataset(ds, self.family)
        return Problem(ds, fam, self.function_class, self.loss, self)

    def exact_risk(self, hypothesis, weight_index):
        delta = hypothesis.vector - self.beta_star
        return float(delta @ self._sigmas[weight_index] @ delta + self.noise ** 2 / 3.0)

    def best_in_class(self, weight_index):
        return self.function_class.hypothesis(self.beta_star)

    def prediction_error(self, beta) -> float:
        """||beta - beta_star||^2 in the P_0 covariance norm."""
        delta = np.asarray(beta, dtype=float) - self.beta_star
        return float(delta @ self.sigma_p0 @ delta)

    def sample_weighted(self, weight_index, N, rng):
        U, X, y = self._draw(N, rng)
        return X, y, None, self._weights(U)[:, weight_index]

    def dro_value(self):
        return self.noise ** 2 / 3.0

    def mro_value(self):
        return 0.0


def build_dro_slow(n: int, mu1: float = 1.5, mu2: float = 0.5, C: float = 2.0, seed=0) -> Problem:
    return DroSlowScenario(mu1, mu2, C).sample(n, seed)


def build_linreg_covshift(d: int, n: int, seed=0, shifts=None, noise: float = 0.5,
                          beta_star=None) -> Problem:
    kw = {} if shifts is None else {"shifts": shifts}
    return LinRegCovShift(d=d, beta_star=beta_star, noise=noise, **kw).sample(n, seed)


@dataclass
class ContextualBandit(Scenario):
    """Logged bandit data z = (x, a, r) with an epsilon-greedy logging policy.

    Policies are named: ``logging``, ``uniform``, ``greedy``, ``antigreedy``
    or ``action:k``. The reward model is linear in phi(x, a) = e_a (x) [1, x]
    / sqrt(2), fitted over an l2 ball.
    """

    K: int = 3
    dim: int = 2
    policies: Sequence[str] = ("logging", "uniform", "greedy", "antigreedy")
    epsilon: float = 0.3
    reward_noise: float = 0.1
    radius: Optional[float] = None
    param_seed: int = 0
    kind: str = "contextual-bandit"

    def __post_init__(self):
        if self.K < 2 or self.dim < 1:
            raise ValueError("need K >= 2 actions and dim >= 1")
        if not 0 < self.epsilon <= 1:
            raise ValueError("logging epsilon must be in (0, 1] so every action has positive "
                             "probability")
        if not 0 <= self.reward_noise <= 0.1:
            raise ValueError("reward noise must lie in [0, 0.1] to keep rewards in [0, 1]")
        theta = np.random.default_rng(self.param_seed).normal(size=(self.K, self.dim))
        self.theta = theta / np.linalg.norm(theta, axis=1, keepdims=True)
        self.floor = self.epsilon / self.K
        if self.radius is None:
            self.radius = math.sqrt(self.K)
        self.policies = tuple(self.policies)
        if not self.policies:
            raise ValueError("need at least one policy")
        bounds = [self._policy_bound(p) for p in self.policies]
        self.family = WeightFamily.from_bounds(self.policies, bounds)
        self.function_class = FunctionClass.linear(self.K * (self.dim + 1), self.radius)
        top = self.radius + 1.0
        self.loss = LossSpec("squared", bound=top * top, lipschitz=2 * top)

    def _policy_bound(self, name):
        if name == "logging":
            return 1.0
        if name == "uniform":
            return (1.0 / self.K) / self.floor
        if name in ("greedy", "antigreedy") or name.startswith("action:"):
            if name.startswith("action:") and not 0 <= int(name.split(":")[1]) < self.K:
                raise ValueError(f"unknown action in policy {name!r}")
            return 1.0 / self.floor
        raise ValueError(f"unknown policy {name!r}")

    def mean_reward(self, X):
        return 0.5 + 0.4 * X @ self.theta.T

    def policy_probs(self, name, X):
        n = X.shape[0]
        scores = X @ self.theta.T
        if name == "logging":
            out = np.full((n, self.K), self.floor)
            out[np.arange(n), scores.argmax(axis=1)] += 1 - self.epsilon
            return out
        if name == "uniform":
            return np.full((n, self.K), 1.0 / self.K)
        if name == "greedy":
            a = scores.argmax(axis=1)
        elif name == "antigreedy":
            a = scores.argmin(axis=1)
        else:
            a = np.full(n, int(name.split(":")[1]))
        out = np.zeros((n, self.K))
        out[np.arange(n), a] = 1.0
        return out

    def features(self, X, actions):
        n = X.shape[0]
        base = np.column_stack([np.ones(n), X]) / math.sqrt(2.0)
        phi = np.zeros((n, self.K * (self.dim + 1)))
        for a in range(self.K):
            rows = actions == a
            phi[rows, a * (self.dim + 1):(a + 1) * (self.dim + 1)] = base[rows]
        return phi

    def _draw(self, n, rng):
        X = rng.uniform(-1.0, 1.0, size=(n, self.dim)) / math.sqrt(self.dim)
        mu = self.policy_probs("logging", X)
        actions = (rng.random(n)[:, None] > np.cumsum(mu, axis=1)).sum(axis=1)
        actions = np.minimum(actions, self.K - 1)
        r = self.mean_reward(X)[np.arange(n), actions]
        r = r + rng.uniform(-self.reward_noise, self.reward_noise, size=n)
        W = np.column_stack([self.policy_probs(p, X)[np.arange(n), actions]
                             / mu[np.arange(n), actions] for p in self.policies])
        return X, actions, r, W

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)
        X, actions, r, W = self._draw(n, rng)
        W = np.minimum(W, np.asarray(self.family.per_weight_bound))
        ds = Dataset(self.features(X, actions), r, W, self.family.names, tags=actions,
                     label_bound=1.0)
        ds, fam, _ = validate_dataset(ds, self.family)
        return Problem(ds, fam, self.function_class, self.loss, self)

    def sample_weighted(self, weight_index, N, rng):
        X, actions, r, W = self._draw(N, rng)
        return self.features(X, actions), r, actions, W[:, weight_index]

    def best_in_class(self, weight_index):
        beta = np.zeros(self.K * (self.dim + 1))
        for a in range(self.K):
            beta[a * (self.dim + 1):(a + 1) * (self.dim + 1)] = \
                math.sqrt(2.0) * np.r_[0.5, 0.4 * self.theta[a]]
        if np.linalg.norm(beta) > self.radius:
            raise ValueError("true reward model lies outside the class ball; raise radius")
        return self.function_class.hypothesis(beta)


def build_contextual_bandit(K: int, dim: int, n: int, policies=("logging", "uniform", "greedy"),
                            epsilon: float = 0.3, seed=0, **kw) -> Problem:
    return ContextualBandit(K=K, dim=dim, policies=policies, epsilon=epsilon, **kw).sample(n, seed)


SCENARIOS = {"prop1": lambda **kw: prop1_scenario(), "dro-slow": DroSlowScenario,
             "linreg-covshift": LinRegCovShift, "contextual-bandit": ContextualBandit}


def scenario_from_config(spec: dict) -> Scenario:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in SCENARIOS:
        raise ValueError(f"unknown scenario kind {kind!r}")
    try:
        return SCENARIOS[kind](**spec)
    except TypeError as exc:
        raise ValueError(f"bad parameters for scenario {kind!r}: {exc}") from exc


# --- rate sweeps -----------------------------------------------------------

METHODS = ("MRO", "SMRO", "DRO", "ERM")
METRICS = ("worst_case_regret", "worst_case_excess_regret", "worst_case_excess_risk")


def fit_loglog_slope(n_grid, values) -> float:
    """Least-squares slope of log(value) against log(n)."""
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0):
        raise ValueError("metric values must be positive for a log-log fit")
    x, y = np.log(np.asarray(n_grid, dtype=float)), np.log(v)
    x = x - x.mean()
    return float(x @ (y - y.mean()) / (x @ x))


def fit_estimator(problem: Problem, method: str, T: int, scaling: str = "fast") -> Hypothesis:
    oracle = ErmOracle(problem.function_class)
    if method == "ERM":
        return oracle(np.ones(problem.dataset.n), problem.dataset, problem.loss)
    objective = Objective(method, ScalingRule(scaling) if method == "SMRO" else None)
    sol = solve_game(problem.dataset, problem.family, oracle, problem.loss, objective, T=T)
    return sol.best_hypothesis


def evaluate_metric(scenario: Scenario, hypothesis: Hypothesis, metric: str) -> float:
    if metric.startswith("regret:"):
        j = scenario.family.names.index(metric.split(":", 1)[1])
        base = population_risk(scenario.best_in_class(j), scenario, j)
        return population_risk(hypothesis, scenario, j) - base
    report = population_regret_report(hypothesis, scenario)
    if metric == "worst_case_regret":
        return report.worst_case_regret
    if metric == "worst_case_excess_regret":
        return report.worst_case_regret - scenario.mro_value()
    if metric == "worst_case_excess_risk":
        return report.worst_case_risk - scenario.dro_value()
    raise ValueError(f"unknown metric {metric!r}")


def replicate_seed(seed: int, n: int, replicate: int) -> int:
    return int(np.random.SeedSequence([seed, n, replicate]).generate_state(1)[0])


def _run_replicate(args):
    scenario, method, metric, n, rep, seed, T = args
    problem = scenario.sample(n, replicate_seed(seed, n, rep))
    h = fit_estimator(problem, method, T)
    return n, rep, evaluate_metric(scenario, h, metric)


@dataclass
class RateSweepResult:
    n_grid: list
    per_n_median_metric: list
    fitted_slope: float
    replicates: int
    seed: int
    method: str = ""
    metric: str = ""
    values: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "replicate", "metric"])
        for n in self.n_grid:
            for rep, v in enumerate(self.values.get(n, [])):
                w.writerow([n, rep, format(v, ".17g")])
        return buf.getvalue()

    def summary(self) -> dict:
        """JSON-ready summary; missing values (partial sweeps) become None."""
        def clean(v):
            return None if math.isnan(v) else v
        return {"method": self.method, "metric": self.metric, "n_grid": list(self.n_grid),
                "per_n_median_metric": [clean(v) for v in self.per_n_median_metric],
                "fitted_slope": clean(self.fitted_slope), "replicates": self.replicates,
                "seed": self.seed}


class RateSweepError(RuntimeError):
    def __init__(self, message, partial: RateSweepResult):
        super().__init__(message)
        self.partial = partial


def rate_sweep(scenario: Scenario, method: str, metric: str, n_grid, replicates: int,
               seed: int = 0, T: int = 500, jobs: int = 1) -> RateSweepResult:
    """Median population metric per sample size and its fitted log-log slope."""
    n_grid = [int(n) for n in n_grid]
    if len(n_grid) < 4 or any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly increasing with at least 4 points")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if replicates < 1:
        raise ValueError("need at least one replicate")
    tasks = [(scenario, method, metric, n, r, seed, T) for n in n_grid for r in range(replicates)]
    values = {n: [math.nan] * replicates for n in n_grid}

    def partial(msg):
        done = {n: [v for v in vs if not math.isnan(v)] for n, vs in values.items()}
        res = RateSweepResult(n_grid, [float(np.median(v)) if v else math.nan
                                       for v in done.values()], math.nan, replicates, seed,
                              method, metric, done)
        return RateSweepError(msg, res)

    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for n, r, v in pool.map(_run_replicate, tasks, chunksize=max(1, len(tasks) // (4 * jobs))):
                    values[n][r] = v
        else:
            for task in tasks:
                n, r, v = _run_replicate(task)
                values[n][r] = v
    except Exception as exc:
        raise partial(f"replicate failed: {exc}") from exc
    medians = [float(np.median(values[n])) for n in n_grid]
    slope = fit_loglog_slope(n_grid, medians)
    logger.info("rate sweep %s/%s: slope %.3f", method, metric, slope)
    return RateSweepResult(n_grid, medians, slope, replicates, seed, method, metric, values)
