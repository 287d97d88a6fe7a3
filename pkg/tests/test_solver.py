import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mrokit import (Dataset, ErmOracle, FunctionClass, LossSpec, Objective, ScalingRule,
                    WeightFamily, gap_certificate, mixed_game_value, solve_game,
                    worst_case_regret_bounded_family)
from mrokit.risk import population_risk
from mrokit.scenarios import build_example2_matrix, prop1_scenario
from mrokit.solver import (bounded_weight_sup, default_eta, eg_update, payoff,
                           precompute_baselines, regret_report)

from helpers import random_finite_game, support_enumeration_value, vertex_bounded_weight_sup


@pytest.fixture(scope="module")
def prop1():
    sc = prop1_scenario()
    return sc, sc.exact_twin(), ErmOracle(sc.function_class)


class TestEta:
    def test_values(self):
        assert default_eta(2.0, 100, 1) == 0.0
        assert default_eta(2.0, 100, 2) == pytest.approx(0.0416277, abs=5e-8)
        assert default_eta(2.0, 400, 3) == pytest.approx(default_eta(2.0, 100, 3) / 2)

    def test_invalid(self):
        with pytest.raises(ValueError):
            default_eta(0.0, 10, 2)
        with pytest.raises(ValueError):
            default_eta(1.0, 0, 2)


def test_eg_step_by_hand():
    rho = eg_update([0.5, 0.5], [0.2, 0.0], 0.5)
    np.testing.assert_allclose(rho, [0.524979, 0.475021], atol=5e-7)
    e = math.exp(0.1)
    np.testing.assert_allclose(rho, [e / (e + 1), 1 / (e + 1)], rtol=1e-15)


def test_prop1_baselines_and_payoffs(prop1):
    sc, twin, oracle = prop1
    vals, hyps = precompute_baselines(twin, sc.family, oracle, sc.loss)
    np.testing.assert_allclose(vals, [0.04, 0.26], atol=1e-12)
    assert [h.params[0] for h in hyps] == [0.3, 0.6]
    f2 = sc.function_class.hypotheses[1]
    assert payoff(f2, 0, twin, sc.loss, Objective("MRO"), vals) == pytest.approx(0.21)
    assert payoff(f2, 0, twin, sc.loss, Objective("DRO"), vals) == pytest.approx(0.25)
    assert payoff(hyps[1], 1, twin, sc.loss, Objective("MRO"), vals) == 0.0
    smro = payoff(f2, 0, twin, sc.loss, Objective("SMRO"), vals, scaling=[2.0, 2.0])
    assert smro == pytest.approx(0.105)


def test_prop1_game(prop1):
    sc, twin, oracle = prop1
    mro = solve_game(twin, sc.family, oracle, sc.loss, Objective("MRO"), T=2000)
    assert mro.best_hypothesis.params[0] == 0.3
    rep = regret_report(mro, twin, sc.loss)
    assert rep.worst_case_regret == pytest.approx(0.03, abs=1e-12)
    bound = 2 * 2 * math.sqrt(math.log(2) / 2000)
    assert bound == pytest.approx(0.0745, abs=5e-5)
    assert -1e-10 <= mro.gap_certificate <= bound
    dro = solve_game(twin, sc.family, oracle, sc.loss, Objective("DRO"), T=2000)
    assert dro.best_hypothesis.params[0] == 0.6
    assert dro.best_value == pytest.approx(0.26, abs=1e-12)
    assert gap_certificate(dro, twin, sc.family, oracle, sc.loss, Objective("DRO")) == \
        dro.gap_certificate
    with pytest.raises(ValueError):
        gap_certificate(dro, twin, sc.family, oracle, sc.loss, Objective("MRO"))


def test_single_weight_is_erm():
    rng = np.random.default_rng(0)
    y = rng.uniform(-1, 1, 30)
    ds = Dataset(np.zeros((30, 0)), y, np.ones((30, 1)), ("one",))
    fam = WeightFamily.from_bounds(("one",), (1.0,))
    sol = solve_game(ds, fam, ErmOracle(FunctionClass.interval(2.0)), LossSpec(bound=9.0),
                     Objective("MRO"), T=50)
    assert sol.eta == 0.0 and len(sol.iterate_hypotheses) == 1
    assert sol.best_hypothesis.params[0] == pytest.approx(y.mean())
    assert sol.mixture_value == pytest.approx(0.0, abs=1e-15)
    assert sol.gap_certificate == pytest.approx(0.0, abs=1e-15)


def test_duplicate_columns_identical_baselines(prop1):
    sc, twin, oracle = prop1
    W = np.column_stack([twin.weight_matrix, twin.weight_matrix[:, 1]])
    ds = twin.with_weights(W, ("P1", "P2", "P2bis"))
    fam = WeightFamily.from_bounds(ds.weight_names, (2.0, 2.0, 2.0))
    vals, _ = precompute_baselines(ds, fam, oracle, sc.loss)
    assert vals[1] == vals[2]


def test_zero_column_baseline_error(prop1):
    sc, twin, oracle = prop1
    ds = twin.with_weights(np.column_stack([twin.weight_matrix[:, 0], np.zeros(twin.n)]),
                           ("P1", "Z"))
    with pytest.raises(ValueError, match="identically zero"):
        precompute_baselines(ds, WeightFamily.from_bounds(("P1", "Z"), (2.0, 1.0)), oracle,
                             sc.loss)


def test_solution_invariants_random_instances():
    rng = np.random.default_rng(5)
    loss = LossSpec("absolute", bound=1.0, lipschitz=1.0)
    for _ in range(40):
        ds, fam, fc, _ = random_finite_game(rng)
        for mode in ("MRO", "SMRO", "DRO"):
            sol = solve_game(ds, fam, ErmOracle(fc), loss, Objective(mode), T=60)
            np.testing.assert_allclose(sol.rho_history.sum(axis=1), 1.0, atol=1e-12)
            assert np.all(sol.rho_history >= 0)
            assert sol.rho_final.sum() == pytest.approx(1.0, abs=1e-12)
            assert sol.best_value <= sol.mixture_value + 1e-12
            assert sol.gap_certificate >= -1e-10


def test_solver_update_matches_single_steps(prop1):
    sc, twin, oracle = prop1
    sol = solve_game(twin, sc.family, oracle, sc.loss, Objective("MRO"), T=5)
    vals = sol.per_weight_baselines
    rho = sol.rho_history[0]
    for t in range(4):
        f = sol.iterate_hypotheses[t]
        p = [payoff(f, j, twin, sc.loss, Objective("MRO"), vals) for j in range(2)]
        rho = eg_update(rho, p, sol.eta)
        np.testing.assert_allclose(sol.rho_history[t + 1], rho, rtol=1e-13)


def test_infinite_class_gap_is_weak_duality_bound():
    rng = np.random.default_rng(2)
    n = 200
    tags = rng.integers(1, 3, n)
    y = np.where(tags == 1, 0.8, -0.4) + rng.uniform(-0.2, 0.2, n)
    W = np.column_stack([2.0 * (tags == 1), 2.0 * (tags == 2)])
    ds = Dataset(np.zeros((n, 0)), y, W, ("a", "b"), tags=tags)
    fam = WeightFamily.from_bounds(("a", "b"), W.max(axis=0))
    loss = LossSpec(bound=4.0)
    sol = solve_game(ds, fam, ErmOracle(FunctionClass.interval(1.0)), loss, Objective("MRO"),
                     T=300)
    # brute-force pure minimax over a fine grid sits between the bounds
    grid = np.linspace(-1, 1, 4001)
    worst = [max(payoff(FunctionClass.interval(1.0).hypothesis(c), j, ds, loss,
                        Objective("MRO"), sol.per_weight_baselines) for j in range(2))
             for c in grid]
    lower = sol.mixture_value - sol.gap_certificate
    assert lower <= min(worst) + 1e-12
    assert sol.exact_minimizer is None


def test_dominated_game_gap_vanishes():
    # hypothesis 0 is best for every weight
    L = np.array([[0.1, 0.5], [0.2, 0.9], [0.0, 0.4]])
    fc = FunctionClass.finite([{"by_tag": {i + 1: L[i, j] for i in range(3)}} for j in range(2)])
    W = np.array([[1.5, 0.5], [1.0, 1.0], [0.5, 1.5]])
    ds = Dataset(np.zeros((3, 0)), np.zeros(3), W, ("a", "b"), tags=[1, 2, 3])
    fam = WeightFamily.from_bounds(("a", "b"), (1.5, 1.5))
    gaps = [solve_game(ds, fam, ErmOracle(fc), LossSpec("absolute"), Objective("MRO"),
                       T=T).gap_certificate for T in (10, 100, 1000)]
    assert gaps == [0.0, 0.0, 0.0]


class TestMixedGame:
    def test_prop1_regret_matrix(self):
        v, p, q = mixed_game_value([[0.0, 0.03], [0.21, 0.0]])
        assert v == pytest.approx(0.02625, abs=1e-12)
        np.testing.assert_allclose(p, [0.875, 0.125], atol=1e-9)

    def test_zero_row_and_scalar(self):
        assert mixed_game_value([[0.3, 0.2], [0.0, 0.0]])[0] == pytest.approx(0.0, abs=1e-12)
        assert mixed_game_value([[0.7]])[0] == pytest.approx(0.7)
        with pytest.raises(ValueError):
            mixed_game_value([[np.nan]])

    def test_against_support_enumeration(self):
        rng = np.random.default_rng(9)
        for _ in range(60):
            M = rng.uniform(0, 1, size=(int(rng.integers(1, 5)), int(rng.integers(1, 5))))
            assert mixed_game_value(M)[0] == pytest.approx(support_enumeration_value(M),
                                                           abs=1e-9)


def test_mixture_value_is_pure_not_mixed():
    """The iterate average of sup_w payoff sits above the pure value, which can exceed the
    mixed value by more than the EG bound; the sup outside the average obeys the bound."""
    # matching pennies in regret form
    fc = FunctionClass.finite([{"by_tag": {1: 0.0, 2: 0.5}}, {"by_tag": {1: 0.5, 2: 0.0}}])
    ds = Dataset(np.zeros((2, 0)), np.zeros(2), [[2.0, 0.0], [0.0, 2.0]], ("a", "b"),
                 tags=[1, 2])
    fam = WeightFamily.from_bounds(("a", "b"), (2.0, 2.0))
    T = 1000
    sol = solve_game(ds, fam, ErmOracle(fc), LossSpec("absolute"), Objective("MRO"), T=T)
    bound = 2 * fam.family_bound * math.sqrt(math.log(2) / T)
    M = np.array([[0.0, 0.5], [0.5, 0.0]])
    mixed = mixed_game_value(M)[0]
    assert mixed == pytest.approx(0.25)
    assert sol.mixture_value >= 0.5 - 1e-12 > mixed + bound
    counts = np.bincount([h.index for h in sol.iterate_hypotheses], minlength=2) / T
    assert np.max(counts @ M) <= mixed + bound


class TestBoundedFamily:
    def test_small_example(self):
        assert bounded_weight_sup([-1.0, 0.0, 2.0, 3.0], 2.0) == pytest.approx(2.5)
        assert vertex_bounded_weight_sup([-1.0, 0.0, 2.0, 3.0], 2.0) == pytest.approx(2.5)

    def test_four_point_regret_value(self):
        # losses of f minus losses of f' equal d = (-1, 0, 2, 3)
        d = np.array([-1.0, 0.0, 2.0, 3.0])
        fc = FunctionClass.finite([{"by_tag": {i + 1: v for i, v in enumerate(d + 1)}},
                                   {"by_tag": {i + 1: 1.0 for i in range(4)}}])
        ds = Dataset(np.zeros((4, 0)), np.zeros(4), np.ones((4, 1)), ("w",), tags=[1, 2, 3, 4])
        loss = LossSpec("absolute", bound=5.0)
        val = worst_case_regret_bounded_family(fc.hypotheses[0], ds, loss, fc, 2.0)
        assert val == pytest.approx(vertex_bounded_weight_sup(d, 2.0))

    def test_b_equal_one_is_plain_regret(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            d = rng.normal(size=7)
            assert bounded_weight_sup(d, 1.0) == pytest.approx(d.mean(), abs=1e-12)

    def test_single_sample(self):
        assert bounded_weight_sup([0.7], 3.0) == pytest.approx(0.7)

    def test_errors(self):
        with pytest.raises(ValueError):
            bounded_weight_sup([1.0], 0.5)
        ds = Dataset(np.zeros((2, 1)), [0.0, 1.0], np.ones((2, 1)), ("w",))
        h = FunctionClass.linear(1).hypothesis([0.0])
        with pytest.raises(ValueError):
            worst_case_regret_bounded_family(h, ds, LossSpec(), FunctionClass.linear(1), 2.0)

    @settings(max_examples=150, deadline=None)
    @given(d=arrays(float, st.integers(1, 9), elements=st.floats(-5, 5)),
           B=st.sampled_from([1.0, 1.25, 1.5, 2.0, 3.0, 4.0]))
    def test_matches_vertex_enumeration(self, d, B):
        assert bounded_weight_sup(d, B) == pytest.approx(vertex_bounded_weight_sup(d, B),
                                                         abs=1e-9)

    def test_interval_comparators(self):
        rng = np.random.default_rng(8)
        y = rng.uniform(-1, 1, 10)
        ds = Dataset(np.zeros((10, 0)), y, np.ones((10, 1)), ("w",))
        loss = LossSpec(bound=4.0)
        fc = FunctionClass.interval(1.0)
        h = fc.hypothesis(0.2)
        val = worst_case_regret_bounded_family(h, ds, loss, fc, 2.0)
        grid = np.linspace(-1, 1, 20001)
        lh = (0.2 - y) ** 2
        brute = max(vertex_bounded_weight_sup(lh - (c - y) ** 2, 2.0) for c in grid[::50])
        assert val >= brute - 1e-12
        assert val <= max(bounded_weight_sup(lh - (c - y) ** 2, 2.0) for c in grid) + 1e-9


def test_smro_scaling_changes_selection_weights():
    rng = np.random.default_rng(1)
    ds, fam, fc, _ = random_finite_game(rng, max_f=4, max_w=3)
    loss = LossSpec("absolute")
    sol = solve_game(ds, fam, ErmOracle(fc), loss,
                     Objective("SMRO", ScalingRule("explicit", tuple(range(1, len(fam) + 1)))),
                     T=20)
    np.testing.assert_array_equal(sol.scaling, np.arange(1, len(fam) + 1))
    assert sol.metadata["eta_range"].startswith("max_w")
    d = sol.to_dict()
    assert list(d)[:3] == ["objective", "eta", "T"]


def test_mro_population_regret_not_above_dro():
    sc = prop1_scenario()
    twin = sc.exact_twin()
    oracle = ErmOracle(sc.function_class)
    picks = {m: sc.function_class.hypotheses[
        solve_game(twin, sc.family, oracle, sc.loss, Objective(m), T=200).exact_minimizer]
        for m in ("MRO", "DRO")}

    def worst_regret(h):
        return max(population_risk(h, sc, j) - population_risk(sc.best_in_class(j), sc, j)
                   for j in range(2))
    assert worst_regret(picks["MRO"]) <= worst_regret(picks["DRO"])
    ex = build_example2_matrix()
    assert ex.regret[ex.mro_selection].max() <= ex.regret[ex.dro_selection].max()
