"""Minimax regret optimization over finite importance-weight families."""
from .core import (Dataset, FunctionClass, Hypothesis, LossSpec, Sample, WeightFamily, dumps,
                   validate_dataset)
from .estimators import MinimaxRegretRegressor
from .oracles import ErmOracle, ball_constrained_least_squares
from .risk import (RegretReport, ScalingRule, empirical_regret_report, empirical_risk,
                   empirical_risks, population_regret_report, population_risk)
from .solver import (GameSolution, Objective, gap_certificate, mixed_game_value, solve_game,
                     worst_case_regret_bounded_family)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ErmOracle", "FunctionClass", "GameSolution", "Hypothesis", "LossSpec",
    "MinimaxRegretRegressor", "Objective", "RegretReport", "Sample", "ScalingRule",
    "WeightFamily",
    "ball_constrained_least_squares", "dumps", "empirical_regret_report", "empirical_risk",
    "empirical_risks", "gap_certificate", "mixed_game_value", "population_regret_report",
    "population_risk", "solve_game", "validate_dataset", "worst_case_regret_bounded_family",
]
