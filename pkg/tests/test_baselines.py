import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from explainopt.baselines import (
    min_sum_min,
    nominal_solution,
    performance,
    performance_values,
)
from explainopt.builder import BuildOptions, build_exact
from explainopt.errors import BudgetExceededError, ContractError
from explainopt.nominal import Selection, linear_cost, per_scenario_optimum
from explainopt.scenarios import Dimension, Kind, ScenarioSet
from explainopt.tree import DecisionTree, Split, allocated_costs


def _set(values):
    values = np.asarray(values, dtype=float)
    return ScenarioSet([Dimension(f"c{i}", Kind.COST) for i in range(values.shape[1])], values)


def _vec(items, n=5):
    x = np.zeros(n, dtype=int)
    x[[i - 1 for i in items]] = 1
    return x


def test_nominal_on_example(portfolio):
    scen, spec = portfolio
    nom = nominal_solution(scen, spec)
    assert nom.items == {3, 5}
    assert nom.value == pytest.approx(9.3, abs=1e-12)
    assert math.fsum(linear_cost(scen.cost_values, nom.x)) == 93


def test_nominal_single_scenario(portfolio):
    scen, spec = portfolio
    one = scen.subset([6])
    assert nominal_solution(one, spec).value == per_scenario_optimum(spec, one)[0]


def test_identical_scenarios_make_nominal_optimal():
    scen = _set([[3, 1, 2]] * 4)
    spec = Selection(3, 1)
    nom = linear_cost(scen.cost_values, nominal_solution(scen, spec).x)
    opt = per_scenario_optimum(spec, scen)
    assert np.array_equal(nom, opt)
    assert performance(nom, nom, opt) == 1.0


def test_msm_single_cell_is_nominal(portfolio):
    scen, spec = portfolio
    for method in ("exact", "alternating"):
        msm = min_sum_min(scen, spec, 1, method=method)
        assert msm.total == 93


def test_msm_example_bounds(portfolio):
    scen, spec = portfolio
    msm = min_sum_min(scen, spec, 4, method="exact")
    assert 53 <= msm.total <= 58
    assert msm.total <= build_exact(scen, spec, BuildOptions(depth=2)).total
    assert msm.value == pytest.approx(msm.total / 10, rel=1e-12)
    alt = min_sum_min(scen, spec, 4)
    assert alt.total >= msm.total


def test_msm_many_cells_reaches_per_scenario_optimum(portfolio):
    scen, spec = portfolio
    sub = scen.subset(range(6))
    opt = math.fsum(per_scenario_optimum(spec, sub))
    assert min_sum_min(sub, spec, 6, method="exact").total == opt
    assert min_sum_min(sub, spec, 9, method="exact").total == opt
    assert min_sum_min(sub, spec, 9, method="alternating").total == opt


def test_msm_assignment_is_best_of_k(portfolio):
    scen, spec = portfolio
    msm = min_sum_min(scen, spec, 3, seed=2)
    costs = np.column_stack([linear_cost(scen.cost_values, s.x) for s in msm.solutions])
    assert np.array_equal(msm.costs, costs.min(axis=1))
    assert np.array_equal(msm.assignment.leaf_of, costs.argmin(axis=1))


def test_alternating_history_strictly_decreasing(rng):
    for seed in range(20):
        values = rng.integers(0, 20, size=(15, 6))
        msm = min_sum_min(_set(values), Selection(6, 2), 3, seed=seed, restarts=3)
        h = msm.history
        assert all(b < a for a, b in zip(h, h[1:]))
        assert h[-1] == pytest.approx(msm.total, rel=1e-12)


def test_msm_budget_and_arguments(portfolio):
    scen, spec = portfolio
    with pytest.raises(BudgetExceededError):
        min_sum_min(scen, spec, 4, method="exact", budget=1000)
    with pytest.raises(ContractError):
        min_sum_min(scen, spec, 0)
    with pytest.raises(ContractError):
        min_sum_min(scen, spec, 2, restarts=0)
    with pytest.raises(ContractError):
        min_sum_min(scen, spec, 2, method="lp")


def test_alternating_deterministic(portfolio):
    scen, spec = portfolio
    a = min_sum_min(scen, spec, 3, seed=11)
    b = min_sum_min(scen, spec, 3, seed=11)
    assert [s.items for s in a.solutions] == [s.items for s in b.solutions]


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.lists(st.integers(0, 9), min_size=4, max_size=4), min_size=1, max_size=7),
    st.integers(1, 3),
    st.integers(1, 4),
)
def test_exact_msm_matches_brute_force(rows, p, K):
    scen = _set(rows)
    spec = Selection(4, p)
    sols = list(oracles.all_solutions(spec))
    expected = oracles.brute_min_sum_min(scen.cost_values, sols, K)
    assert min_sum_min(scen, spec, K, method="exact").total == expected
    assert min_sum_min(scen, spec, K, restarts=2).total >= expected


def test_performance_anchors():
    opt = np.array([1.0, 2.0, 3.0])
    nom = np.array([2.0, 4.0, 6.0])
    assert performance(opt, nom, opt) == 1.0
    assert performance(nom, nom, opt) == 0.0
    assert performance([1.5, 3.0, 4.5], nom, opt) == 0.5


def test_performance_example_scenario_three(portfolio):
    scen, spec = portfolio
    tree = DecisionTree(
        2, [Split(1, 5.5), Split(2, 6.0)], [_vec(s) for s in ({2, 3}, {2, 5}, {3, 5}, {1, 5})], problem=spec
    )
    f = allocated_costs(tree, scen)
    nom = linear_cost(scen.cost_values, nominal_solution(scen, spec).x)
    opt = per_scenario_optimum(spec, scen)
    assert (f[2], nom[2], opt[2]) == (5, 5, 4)
    assert performance_values(f, nom, opt)[2] == 0.0


def test_performance_excludes_zero_denominator():
    vals = performance_values([2.0, 5.0], [2.0, 9.0], [2.0, 1.0])
    assert math.isnan(vals[0])
    assert vals[1] == 0.5
    assert performance([2.0, 5.0], [2.0, 9.0], [2.0, 1.0]) == 0.5


def test_performance_all_excluded():
    assert performance([1.0, 1.0], [1.0, 1.0], [1.0, 1.0]) == 1.0
    # f cannot beat the optimum, so differing from it while nominal equals it is undefined
    assert performance([1.0, 2.0], [1.0, 1.0], [1.0, 1.0]) is None


def test_performance_precondition():
    with pytest.raises(ContractError):
        performance([1.0], [3.0], [2.0])
    with pytest.raises(ContractError):
        performance([1.0, 2.0], [3.0], [1.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 50), st.floats(0, 50)), min_size=1, max_size=20))
def test_performance_at_most_one(rows):
    opt = np.array([r[0] for r in rows])
    f = opt + np.array([r[1] for r in rows])
    nom = opt + np.array([r[2] for r in rows])
    value = performance(f, nom, opt)
    assert value is None or value <= 1.0 + 1e-12
