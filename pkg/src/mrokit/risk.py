"""Weighted risks, per-weight regrets and the scaled-regret coefficients."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, Hypothesis, LossSpec, WeightFamily, empirical_weight_second_moment

NEGATIVE_REGRET_SLACK = 1e-8


def losses(hypothesis: Hypothesis, dataset: Dataset, loss: LossSpec) -> np.ndarray:
    return loss(dataset.labels, hypothesis.predict_dataset(dataset))


def empirical_risk(hypothesis: Hypothesis, weight_index: int, dataset: Dataset,
                   loss: LossSpec) -> float:
    """(1/n) sum_i w(z_i) loss(z_i, f(z_i)) for one weight column."""
    col = dataset.weight_matrix[:, weight_index]
    return float(col @ losses(hypothesis, dataset, loss) / dataset.n)


def empirical_risks(hypothesis: Hypothesis, dataset: Dataset, loss: LossSpec) -> np.ndarray:
    """Weighted empirical risk under every column at once."""
    return losses(hypothesis, dataset, loss) @ dataset.weight_matrix / dataset.n


@dataclass(frozen=True)
class RegretReport:
    weight_names: tuple
    per_weight_risk: np.ndarray
    per_weight_baseline: np.ndarray
    per_weight_regret: np.ndarray
    worst_case_regret: float
    argmax_weight: int

    @classmethod
    def from_risks(cls, names, risks, baselines) -> "RegretReport":
        risks = np.asarray(risks, dtype=float)
        baselines = np.asarray(baselines, dtype=float)
        if risks.shape != baselines.shape:
            raise ValueError(f"{baselines.shape[0]} baselines for {risks.shape[0]} weights")
        regret = risks - baselines
        j = int(np.argmax(regret))
        return cls(tuple(names), risks, baselines, regret, float(regret[j]), j)

    @property
    def clamped_regret(self) -> np.ndarray:
        """Regrets with oracle-tolerance negatives set to zero."""
        r = self.per_weight_regret.copy()
        r[(r < 0) & (r > -NEGATIVE_REGRET_SLACK)] = 0.0
        return r

    @property
    def worst_case_risk(self) -> float:
        return float(self.per_weight_risk.max())

    def to_dict(self) -> dict:
        return {
            "weight_names": list(self.weight_names),
            "per_weight_risk": [float(v) for v in self.per_weight_risk],
            "per_weight_baseline": [float(v) for v in self.per_weight_baseline],
            "per_weight_regret": [float(v) for v in self.clamped_regret],
            "raw_regret": [float(v) for v in self.per_weight_regret],
            "worst_case_regret": self.worst_case_regret,
            "worst_case_risk": self.worst_case_risk,
            "argmax_weight": self.argmax_weight,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["weight_name", "risk", "baseline", "regret"])
        for name, r, b, g in zip(self.weight_names, self.per_weight_risk,
                                 self.per_weight_baseline, self.clamped_regret):
            writer.writerow([name, format(r, ".17g"), format(b, ".17g"), format(g, ".17g")])
        return buf.getvalue()


def empirical_regret_report(hypothesis: Hypothesis, dataset: Dataset, loss: LossSpec,
                            baselines: Sequence[float]) -> RegretReport:
    if len(baselines) != dataset.n_weights:
        raise ValueError(f"{len(baselines)} baselines for {dataset.n_weights} weights")
    return RegretReport.from_risks(dataset.weight_names,
                                   empirical_risks(hypothesis, dataset, loss), baselines)


@dataclass(frozen=True)
class ScalingRule:
    """How SMRO divides each weight's regret.

    kind: ``none`` (all ones), ``slow`` (sigma_hat_w + B_w / sqrt(n)),
    ``fast`` (B_w) or ``explicit`` (given ``values``).
    """

    kind: str = "fast"
    values: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("none", "slow", "fast", "explicit"):
            raise ValueError(f"unknown scaling rule {self.kind!r}")
        if self.kind == "explicit":
            if self.values is None:
                raise ValueError("explicit scaling needs values")
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.values is not None:
            d["values"] = list(self.values)
        return d

    @classmethod
    def from_config(cls, spec) -> "ScalingRule":
        if spec is None:
            return cls("fast")
        if isinstance(spec, str):
            return cls(spec)
        unknown = set(spec) - {"kind", "values"}
        if unknown:
            raise ValueError(f"unknown scaling keys {sorted(unknown)}")
        return cls(spec.get("kind", "fast"), spec.get("values"))


def scaling_coefficients(rule: ScalingRule, dataset: Dataset, family: WeightFamily) -> np.ndarray:
    m = len(family)
    if rule.kind == "none":
        return np.ones(m)
    if rule.kind == "explicit":
        c = np.asarray(rule.values, dtype=float)
        if c.shape != (m,):
            raise ValueError(f"{c.shape[0]} explicit coefficients for {m} weights")
        if np.any(~(c > 0)):
            raise ValueError("explicit scaling coefficients must be positive")
        return c
    bounds = np.asarray(family.per_weight_bound, dtype=float)
    if rule.kind == "fast":
        c = bounds.copy()
    else:
        sigma = np.sqrt([empirical_weight_second_moment(dataset, j) for j in range(m)])
        c = sigma + bounds / math.sqrt(dataset.n)
    bad = np.flatnonzero(~(c > 0))
    if bad.size:
        raise ValueError(f"scaling coefficient is zero for weight {family.names[bad[0]]!r}")
    return c


def population_risk(hypothesis: Hypothesis, scenario, weight_index: int, mode: str = "exact",
                    n_mc: int = 100_000, seed: int = 0, return_se: bool = False):
    """Population risk R_w(f) of a synthetic scenario.

    ``mode="exact"`` uses the scenario's closed form; ``"monte-carlo"``
    averages importance-weighted losses over ``n_mc`` draws.
    """
    if mode == "exact":
        value = scenario.exact_risk(hypothesis, weight_index)
        return (value, 0.0) if return_se else value
    if mode != "monte-carlo":
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    X, y, tags, importance = scenario.sample_weighted(weight_index, n_mc, rng)
    vals = importance * scenario.loss(y, hypothesis.predict(X, tags))
    mean = float(vals.mean())
    if return_se:
        return mean, float(vals.std(ddof=1) / math.sqrt(n_mc))
    return mean


def population_regret_report(hypothesis: Hypothesis, scenario, mode: str = "exact",
                             n_mc: int = 100_000, seed: int = 0) -> RegretReport:
    m = len(scenario.family)
    risks = [population_risk(hypothesis, scenario, j, mode, n_mc, seed) for j in range(m)]
    base = [population_risk(scenario.best_in_class(j), scenario, j, mode, n_mc, seed)
            for j in range(m)]
    return RegretReport.from_risks(scenario.family.names, risks, base)
