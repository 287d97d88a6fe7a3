"""Command-line entry point: ``mrokit {solve,reproduce,rates,bandit}``.

Exit codes: 0 ok, 2 bad config or arguments, 3 dataset validation error,
4 solver or replicate failure, 5 reproduced values deviate from the
reference tables.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .core import Dataset, FunctionClass, LossSpec, WeightFamily, dumps, validate_dataset
from .oracles import ErmOracle
from .risk import ScalingRule, empirical_regret_report, empirical_risks
from .scenarios import (ContextualBandit, RateSweepError, build_example2_matrix, prop1_scenario,
                        rate_sweep, scenario_from_config)
from .solver import Objective, precompute_baselines, regret_report, solve_game

logger = logging.getLogger("mrokit")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER, EXIT_MISMATCH = 0, 2, 3, 4, 5
REFERENCE_TOL = 1e-9

# reference values for the self-checking reproduce command
PROP1_GOLDEN = {
    "risk": {"P1": [0.04, 0.25], "P2": [0.29, 0.26]},
    "mro_worst_case_regret": 0.03,
    "dro_value": 0.26,
    "selection": {"MRO": 0.3, "DRO": 0.6},
}
EXAMPLE2_GOLDEN = {
    "eps": 0.01,
    "risk": {"P1": [0.0, 0.5, 0.51], "P2": [1.0, 0.9, 0.4]},
    "selection": {"MRO": "f_2", "DRO": "f_3"},
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_config(path, allowed: set, required: set = frozenset()) -> dict:
    if path is None:
        raise CliError(EXIT_CONFIG, "--config is required")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError(EXIT_CONFIG, "config must be a JSON object")
    unknown = set(cfg) - allowed
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown config keys {sorted(unknown)}")
    missing = set(required) - set(cfg)
    if missing:
        raise CliError(EXIT_CONFIG, f"missing config fields {sorted(missing)}")
    return cfg


def _prepare_out(out, *names) -> list:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise CliError(EXIT_CONFIG, f"output directory {out} is not writable")
    return [out / n for n in names]


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _config_value(fn, what):
    try:
        return fn()
    except (ValueError, TypeError, KeyError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid {what}: {exc}") from exc


# --- solve -----------------------------------------------------------------

SOLVE_KEYS = {"objective", "scaling", "T", "eta", "seed", "oracle", "loss", "class", "family",
              "renormalize"}


def cmd_solve(args) -> int:
    cfg = _load_config(args.config, SOLVE_KEYS, {"class"})
    objective = _config_value(lambda: Objective(
        cfg.get("objective", "MRO"),
        ScalingRule.from_config(cfg.get("scaling")) if cfg.get("objective") == "SMRO" else None),
        "objective")
    fc = _config_value(lambda: FunctionClass.from_dict(cfg["class"]), "class")
    loss = _config_value(lambda: LossSpec.from_dict(cfg.get("loss", {})), "loss")
    T = cfg.get("T", 2000)
    if not isinstance(T, int) or T < 1:
        raise CliError(EXIT_CONFIG, "T must be a positive integer")
    if cfg.get("oracle", "erm") != "erm":
        raise CliError(EXIT_CONFIG, f"unknown oracle {cfg['oracle']!r}")
    if args.data is None:
        raise CliError(EXIT_CONFIG, "--data is required")
    sol_path, rep_path = _prepare_out(args.out, "solution.json", "report.csv")
    try:
        ds = Dataset.from_jsonl(args.data)
        fam_cfg = cfg.get("family")
        family = (WeightFamily.from_dict(fam_cfg) if fam_cfg is not None else
                  WeightFamily.from_bounds(ds.weight_names, ds.weight_matrix.max(axis=0)))
        ds, family, _ = validate_dataset(ds, family, bool(cfg.get("renormalize", False)))
        loss(ds.labels, np.zeros(ds.n))
    except (OSError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"dataset validation failed: {exc}") from exc
    try:
        sol = solve_game(ds, family, ErmOracle(fc), loss, objective, T=T, eta=cfg.get("eta"))
        report = regret_report(sol, ds, loss)
    except (ValueError, ArithmeticError) as exc:
        raise CliError(EXIT_SOLVER, f"solver failed: {exc}") from exc
    payload = sol.to_dict()
    payload["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    payload["report"] = report.to_dict()
    _write(sol_path, dumps(payload, indent=2) + "\n")
    _write(rep_path, report.to_csv())
    logger.info("solve: best value %.6g, gap %.3g", sol.best_value, sol.gap_certificate)
    return EXIT_OK


# --- reproduce -------------------------------------------------------------

def _compare(label, got, want, failures):
    if isinstance(want, str):
        ok = got == want
    else:
        ok = abs(float(got) - float(want)) <= REFERENCE_TOL
    if not ok:
        failures.append(f"{label}: got {got}, expected {want}")


def _reproduce_prop1(failures) -> dict:
    sc = prop1_scenario()
    twin = sc.exact_twin()
    fc, loss = sc.function_class, sc.loss
    oracle = ErmOracle(fc)
    risk = np.array([empirical_risks(h, twin, loss) for h in fc.hypotheses]).T
    baselines = risk.min(axis=1)
    regret = risk - baselines[:, None]
    out = {"hypotheses": [h.params[0] for h in fc.hypotheses], "risk": {}, "regret": {}}
    for j, name in enumerate(twin.weight_names):
        out["risk"][name] = [float(v) for v in risk[j]]
        out["regret"][name] = [float(v) for v in regret[j]]
        for k, v in enumerate(PROP1_GOLDEN["risk"][name]):
            _compare(f"risk {name} f_{k + 1}", risk[j, k], v, failures)
    sols = {m: solve_game(twin, sc.family, oracle, loss, Objective(m), T=2000)
            for m in ("MRO", "DRO")}
    out["mro_worst_case_regret"] = sols["MRO"].exact_value
    out["dro_value"] = sols["DRO"].exact_value
    _compare("MRO worst-case regret", out["mro_worst_case_regret"],
             PROP1_GOLDEN["mro_worst_case_regret"], failures)
    _compare("DRO value", out["dro_value"], PROP1_GOLDEN["dro_value"], failures)
    out["selection"] = {}
    for m, sol in sols.items():
        exact = fc.hypotheses[sol.exact_minimizer].params[0]
        out["selection"][m] = {"exact": exact, "best_iterate": sol.best_hypothesis.params[0]}
        _compare(f"{m} selection", exact, PROP1_GOLDEN["selection"][m], failures)
        _compare(f"{m} best iterate", sol.best_hypothesis.params[0],
                 PROP1_GOLDEN["selection"][m], failures)
    return out


def _reproduce_example2(failures) -> dict:
    ex = build_example2_matrix(EXAMPLE2_GOLDEN["eps"])
    out = {"eps": ex.eps, "hypotheses": ["f_1", "f_2", "f_3"], "risk": {}, "regret": {}}
    for j, name in enumerate(ex.family.names):
        out["risk"][name] = [float(v) for v in ex.risk[:, j]]
        out["regret"][name] = [float(v) for v in ex.regret[:, j]]
        for k, v in enumerate(EXAMPLE2_GOLDEN["risk"][name]):
            _compare(f"risk {name} f_{k + 1}", ex.risk[k, j], v, failures)
    oracle = ErmOracle(ex.function_class)
    out["selection"] = {}
    for m, analytic in (("MRO", ex.mro_selection), ("DRO", ex.dro_selection)):
        sol = solve_game(ex.twin, ex.family, oracle, ex.loss, Objective(m), T=2000)
        out["selection"][m] = {"analytic": f"f_{analytic + 1}",
                               "exact": f"f_{sol.exact_minimizer + 1}",
                               "best_iterate": f"f_{sol.best_hypothesis.index + 1}"}
        _compare(f"{m} analytic selection", f"f_{analytic + 1}",
                 EXAMPLE2_GOLDEN["selection"][m], failures)
        _compare(f"{m} solver selection", f"f_{sol.exact_minimizer + 1}",
                 EXAMPLE2_GOLDEN["selection"][m], failures)
    return out


def cmd_reproduce(args) -> int:
    (path,) = _prepare_out(args.out, f"{args.fixture}.json")
    failures: list = []
    fn = _reproduce_prop1 if args.fixture == "prop1" else _reproduce_example2
    result = fn(failures)
    result["mismatches"] = failures
    _write(path, dumps(result, indent=2) + "\n")
    for line in failures:
        print(f"MISMATCH {line}", file=sys.stderr)
    sel = result["selection"]
    print(f"{args.fixture}: MRO -> {sel['MRO']}, DRO -> {sel['DRO']}")
    return EXIT_MISMATCH if failures else EXIT_OK


# --- rates -----------------------------------------------------------------

RATES_KEYS = {"scenario", "method", "metric", "n_grid", "replicates", "T", "seed", "target"}


def cmd_rates(args) -> int:
    cfg = _load_config(args.config, RATES_KEYS, {"scenario", "method", "metric", "n_grid"})
    scenario = _config_value(lambda: scenario_from_config(cfg["scenario"]), "scenario")
    n_grid = cfg["n_grid"]
    if (not isinstance(n_grid, list) or len(n_grid) < 4
            or any(not isinstance(n, int) or n < 1 for n in n_grid)
            or any(b <= a for a, b in zip(n_grid, n_grid[1:]))):
        raise CliError(EXIT_CONFIG, "n_grid must be a strictly increasing list of >= 4 sizes")
    target = cfg.get("target")
    if target is not None and (not isinstance(target, list) or len(target) != 2):
        raise CliError(EXIT_CONFIG, "target must be [low, high]")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    csv_path, sum_path = _prepare_out(args.out, "rates.csv", "rates_summary.json")
    try:
        res = rate_sweep(scenario, cfg["method"], cfg["metric"], n_grid,
                         int(cfg.get("replicates", 100)), seed=seed, T=int(cfg.get("T", 500)),
                         jobs=args.jobs)
    except RateSweepError as exc:
        _write(csv_path, exc.partial.to_csv())
        _write(sum_path, dumps(exc.partial.summary(), indent=2) + "\n")
        raise CliError(EXIT_SOLVER, str(exc)) from exc
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid sweep: {exc}") from exc
    summary = res.summary()
    if target is not None:
        summary["target"] = list(target)
        summary["within_target"] = bool(target[0] <= res.fitted_slope <= target[1])
    _write(csv_path, res.to_csv())
    _write(sum_path, dumps(summary, indent=2) + "\n")
    tail = f" target [{target[0]}, {target[1]}]" if target is not None else ""
    print(f"fitted slope {res.fitted_slope:.4f}{tail}")
    return EXIT_OK


# --- bandit ----------------------------------------------------------------

BANDIT_KEYS = {"scenario", "n", "T", "seed"}
BANDIT_SCENARIO_KEYS = {"K", "dim", "policies", "epsilon", "reward_noise", "radius", "param_seed"}


def cmd_bandit(args) -> int:
    cfg = _load_config(args.config, BANDIT_KEYS, {"scenario", "n"})
    spec = cfg["scenario"]
    if not isinstance(spec, dict) or set(spec) - BANDIT_SCENARIO_KEYS:
        raise CliError(EXIT_CONFIG, f"scenario keys must be among {sorted(BANDIT_SCENARIO_KEYS)}")
    scenario = _config_value(lambda: ContextualBandit(**spec), "scenario")
    n = cfg["n"]
    if not isinstance(n, int) or n < 1:
        raise CliError(EXIT_CONFIG, "n must be a positive integer")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    json_path, csv_path = _prepare_out(args.out, "bandit.json", "bandit.csv")
    try:
        prob = scenario.sample(n, np.random.SeedSequence(seed))
        ds, fam, fc, loss = prob.dataset, prob.family, prob.function_class, prob.loss
        oracle = ErmOracle(fc)
        baselines, base_hyps = precompute_baselines(ds, fam, oracle, loss)
        erm = oracle(np.ones(ds.n), ds, loss)
        erm_report = empirical_regret_report(erm, ds, loss, baselines)
        sol = solve_game(ds, fam, oracle, loss, Objective("MRO"), T=int(cfg.get("T", 500)),
                         baselines=(baselines, base_hyps))
        mro_report = regret_report(sol, ds, loss)
    except (ValueError, ArithmeticError) as exc:
        raise CliError(EXIT_SOLVER, f"bandit solve failed: {exc}") from exc
    result = {
        "seed": seed,
        "n": n,
        "policies": list(fam.names),
        "erm": erm_report.to_dict(),
        "mro": mro_report.to_dict(),
        "gap_certificate": sol.gap_certificate,
        "mro_within_certificate": bool(mro_report.worst_case_regret
                                       <= erm_report.worst_case_regret + sol.gap_certificate
                                       + 1e-12),
    }
    rows = ["method,weight_name,risk,baseline,regret"]
    for method, rep in (("erm", erm_report), ("mro", mro_report)):
        rows.extend(f"{method},{line}" for line in rep.to_csv().splitlines()[1:])
    _write(json_path, dumps(result, indent=2) + "\n")
    _write(csv_path, "\n".join(rows) + "\n")
    print(f"worst-case regret: ERM {erm_report.worst_case_regret:.6g}, "
          f"MRO {mro_report.worst_case_regret:.6g}")
    return EXIT_OK


# --- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--data", help="JSON Lines dataset")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="parallel replicate workers")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser = argparse.ArgumentParser(prog="mrokit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve MRO/SMRO/DRO on a dataset")
    rep = sub.add_parser("reproduce", parents=[common], help="check reference fixtures")
    rep.add_argument("fixture", choices=["prop1", "example2"])
    sub.add_parser("rates", parents=[common], help="run a rate sweep")
    sub.add_parser("bandit", parents=[common], help="reward regression on logged bandit data")
    return parser


COMMANDS = {"solve": cmd_solve, "reproduce": cmd_reproduce, "rates": cmd_rates,
            "bandit": cmd_bandit}


def _setup_logging():
    level = os.environ.get("MROKIT_LOG", "error").lower()
    if level not in ("error", "info", "debug"):
        print(f"ignoring MROKIT_LOG={level!r}; expected error, info or debug", file=sys.stderr)
        level = "error"
    logging.basicConfig(level=getattr(logging, level.upper()), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
