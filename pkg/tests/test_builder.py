import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from explainopt.builder import (
    BuildOptions,
    CellEvaluator,
    bool_to_mask,
    build_exact,
    build_greedy,
    build_log_csv,
    build_tree,
    fit_leaves,
    mask_to_indices,
    nominal_solve_bound,
    split_candidates,
)
from explainopt.errors import BudgetExceededError, ContractError
from explainopt.experiments import gen_grid_instance
from explainopt.nominal import GridShortestPath, Selection
from explainopt.scenarios import Dimension, Kind, ScenarioSet, read_scenarios_csv
from explainopt.tree import Assignment, Origin, Split, Structure, assign, dumps_tree, evaluate


def _set(values, kinds=None):
    values = np.asarray(values, dtype=float)
    kinds = kinds or [Kind.COST] * values.shape[1]
    return ScenarioSet([Dimension(f"c{i + 1}", k) for i, k in enumerate(kinds)], values)


def _items(sol):
    return set(sol.items)


def test_midpoint_examples(portfolio):
    s = _set([[3], [7], [8]])
    assert [c.threshold for c in split_candidates(s, 0)] == [5.0, 7.5]
    assert split_candidates(_set([[2], [2]]), 0) == []
    scen, _ = portfolio
    assert [c.threshold for c in split_candidates(scen, 1)] == [2.0, 3.5, 5.5, 7.5, 8.5]
    assert [c.threshold for c in split_candidates(scen, "c2")] == [2.0, 3.5, 5.5, 7.5, 8.5]


def test_candidates_strictly_between_values(rng):
    col = np.sort(rng.uniform(0, 1, 30))
    for c in split_candidates(_set(col[:, None]), 0):
        assert c.lower < c.threshold < c.upper


def test_adjacent_floats_keep_their_bipartition():
    a = 1.0
    b = np.nextafter(a, 2.0)
    (cand,) = split_candidates(_set([[a], [b]]), 0)
    assert a <= cand.threshold < b


def test_mask_helpers():
    flags = np.array([1, 0, 1, 1, 0, 0, 0, 0, 1], dtype=bool)
    m = bool_to_mask(flags)
    assert m == 0b100001101
    assert mask_to_indices(m, 9).tolist() == [0, 2, 3, 8]


def test_fit_leaves_example(portfolio):
    scen, spec = portfolio
    labels = [3, 2, 2, 1, 3, 0, 0, 1, 0, 2]
    fit = fit_leaves(scen, spec, Assignment(labels, 4))
    assert [_items(s) for s in fit.solutions] == [{2, 3}, {2, 4}, {3, 5}, {1, 5}]
    assert fit.total == 58
    assert fit.value == pytest.approx(5.8, abs=1e-12)
    assert fit.origins == [Origin.FITTED] * 4


def test_fit_single_leaf_is_nominal(portfolio):
    scen, spec = portfolio
    fit = fit_leaves(scen, spec, Assignment([0] * 10, 1))
    assert _items(fit.solutions[0]) == {3, 5}
    assert fit.total == 93


def test_fallback_policies(portfolio):
    scen, spec = portfolio
    # leaf 1 is empty; its parent cell is {leaf 0, leaf 1} = scenarios 0..4
    labels = [0, 0, 0, 0, 0, 2, 2, 3, 3, 3]
    parent = fit_leaves(scen, spec, Assignment(labels, 4))
    assert parent.origins[1] is Origin.FALLBACK
    assert np.array_equal(parent.solutions[1].x, parent.solutions[0].x)
    glob = fit_leaves(scen, spec, Assignment(labels, 4), fallback_policy="global-nominal")
    assert _items(glob.solutions[1]) == {3, 5}
    assert parent.total == glob.total
    with pytest.raises(ContractError):
        fit_leaves(scen, spec, Assignment(labels, 4), fallback_policy="nearest")


def test_parent_fallback_climbs_to_nonempty_ancestor(portfolio):
    scen, spec = portfolio
    labels = [4] * 5 + [7] * 5
    fit = fit_leaves(scen, spec, Assignment(labels, 8))
    # leaves 0..3 share the empty cell of node "0"; the root is the first nonempty ancestor
    for k in range(4):
        assert fit.origins[k] is Origin.FALLBACK
        assert _items(fit.solutions[k]) == {3, 5}
    # leaf 5's sibling 4 is nonempty, so it takes their parent's cell = leaf 4's
    assert np.array_equal(fit.solutions[5].x, fit.solutions[4].x)


def test_exact_depth_two_example(portfolio):
    scen, spec = portfolio
    res = build_exact(scen, spec, BuildOptions(depth=2))
    assert 53 <= res.total <= 58
    assert res.total == evaluate(res.tree, scen, sum_form=True)
    assert res.value == pytest.approx(res.total / 10, rel=1e-12)


def test_greedy_depth_two_example(portfolio):
    scen, spec = portfolio
    g1 = build_greedy(scen, spec, BuildOptions(depth=1))
    g2 = build_greedy(scen, spec, BuildOptions(depth=2))
    assert 53 <= g2.total <= 93
    assert g2.total <= g1.total
    assert g2.tree.splits[0] == g1.tree.splits[0]


def _small_selection_case(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(3, 6))
    spec = Selection(n, int(r.integers(1, n)))
    N = int(r.integers(1, 7))
    values = r.integers(0, 6, size=(N, n)).astype(float)
    return spec, _set(values)


@pytest.mark.parametrize("seed", range(25))
def test_exact_matches_brute_force(seed):
    spec, scen = _small_selection_case(seed)
    sols = oracles.all_solutions(spec)
    for Q in (1, 2):
        expected = oracles.brute_uniform_tree(scen.values, scen.cost_values, sols, Q)
        assert build_exact(scen, spec, BuildOptions(depth=Q)).total == expected


@pytest.mark.parametrize("seed", range(15))
def test_greedy_depth_one_matches_brute_force(seed):
    spec, scen = _small_selection_case(100 + seed)
    expected = oracles.brute_uniform_tree(scen.values, scen.cost_values, oracles.all_solutions(spec), 1)
    assert build_greedy(scen, spec, BuildOptions(depth=1)).total == expected


def test_single_scenario(portfolio):
    scen, spec = portfolio
    one = scen.subset([2])
    for build in (build_exact, build_greedy):
        res = build(one, spec, BuildOptions(depth=2))
        assert res.total == 4
        assert sum(o is Origin.FALLBACK for o in res.tree.origins) == 3


def test_constant_data_uses_sentinel():
    scen = _set([[2.0, 5.0], [2.0, 5.0]])
    spec = Selection(2, 1)
    res = build_greedy(scen, spec, BuildOptions(depth=2))
    assert res.tree.splits == (Split(0, 2.0), Split(0, 2.0))
    assert assign(res.tree, scen).leaf_of.tolist() == [0, 0]
    ex = build_exact(scen, spec, BuildOptions(depth=2))
    assert ex.tree.splits == res.tree.splits
    whitelisted = build_greedy(scen, spec, BuildOptions(depth=1, split_dimensions=["c2"]))
    assert whitelisted.tree.splits == (Split(1, 5.0),)


def test_budget_guard(portfolio):
    scen, spec = portfolio
    with pytest.raises(BudgetExceededError) as info:
        build_exact(scen, spec, BuildOptions(depth=2, budget=100))
    assert info.value.required == 2500


def test_exact_rejects_per_node(portfolio):
    scen, spec = portfolio
    with pytest.raises(ContractError):
        build_exact(scen, spec, BuildOptions(depth=1, structure="pernode"))


def test_options_validation():
    with pytest.raises(ContractError):
        BuildOptions(depth=0)
    with pytest.raises(ContractError):
        BuildOptions(keep_probability=0)
    with pytest.raises(ContractError):
        BuildOptions(criterion="worst")
    with pytest.raises(ContractError):
        build_tree(None, None, BuildOptions(), method="magic")


def test_whitelist_restricts_split_dimensions():
    csv = "c1,c2,dow\n#kind,cost,cost,feature\n1,5,1\n5,1,2\n1,5,6\n5,1,7\n"
    scen = read_scenarios_csv(csv)
    res = build_greedy(scen, Selection(2, 1), BuildOptions(depth=1, split_dimensions=["dow"]))
    assert res.tree.splits[0].dimension == 2
    assert res.tree.dimension_names == ("c1", "c2", "dow")


def test_feature_dimension_can_be_best_split():
    # the weekday perfectly separates which item is cheap
    rows = [[1, 9, d] if d <= 5 else [9, 1, d] for d in range(1, 8)]
    scen = _set(rows, [Kind.COST, Kind.COST, Kind.FEATURE])
    res = build_greedy(scen, Selection(2, 1), BuildOptions(depth=1, split_dimensions=[2]))
    assert res.tree.splits[0] == Split(2, 5.5)
    assert res.total == 7


def test_subsampling_rate():
    r = np.random.default_rng(3)
    n_dims, N = 1310, 40
    values = r.uniform(0, 1, size=(N, n_dims))
    scen = _set(values)
    spec = Selection(n_dims, 1)
    res = build_greedy(scen, spec, BuildOptions(depth=1, keep_probability=0.05, seed=4))
    total = n_dims * (N - 1)
    evaluated = res.log[0].candidates_evaluated
    # a kept candidate can still be skipped as a duplicate bipartition
    assert evaluated <= total
    assert 0.045 * total < evaluated < 0.055 * total


def test_greedy_deterministic_bytes():
    inst = gen_grid_instance(4, 4, 3, 1)
    scen = inst.sample(12, [1, 1])
    for structure in ("uniform", "pernode"):
        opts = BuildOptions(depth=2, structure=structure, keep_probability=0.5, seed=9)
        a = build_greedy(scen, inst.spec, opts)
        b = build_greedy(scen, inst.spec, opts)
        assert dumps_tree(a.tree) == dumps_tree(b.tree)


@pytest.mark.parametrize("seed", range(10))
def test_solve_count_bound(seed):
    inst = gen_grid_instance(4, 4, 3, seed)
    scen = inst.sample(15, [seed, 1])
    res = build_greedy(scen, inst.spec, BuildOptions(depth=3))
    n, N, K = len(scen.dimensions), scen.n_scenarios, 8
    assert res.nominal_solves <= nominal_solve_bound(n, N, 3) <= 2 * n * N * K + K


def test_per_node_depth_one_equals_uniform(portfolio):
    scen, spec = portfolio
    a = build_greedy(scen, spec, BuildOptions(depth=1))
    b = build_greedy(scen, spec, BuildOptions(depth=1, structure="pernode"))
    assert a.total == b.total
    assert a.tree.splits == b.tree.splits


@pytest.mark.parametrize("seed", range(10))
def test_per_node_cells_are_local(seed):
    inst = gen_grid_instance(4, 4, 3, 50 + seed)
    scen = inst.sample(14, [seed, 2])
    res = build_greedy(scen, inst.spec, BuildOptions(depth=2, structure=Structure.PER_NODE))
    assert len(res.tree.splits) == 3
    assert res.total == evaluate(res.tree, scen, sum_form=True)
    uniform1 = build_greedy(scen, inst.spec, BuildOptions(depth=1))
    assert res.total <= uniform1.total


def test_build_log(portfolio):
    scen, spec = portfolio
    res = build_greedy(scen, spec, BuildOptions(depth=2))
    lines = build_log_csv(res).splitlines()
    assert lines[0] == "level,candidates_evaluated,best_value"
    assert [ln.split(",")[0] for ln in lines[1:3]] == ["1", "2"]
    assert float(lines[2].split(",")[2]) == res.total
    assert lines[-1].startswith("# nominal_solves=")


def test_cell_evaluator_counts(portfolio):
    scen, spec = portfolio
    ev = CellEvaluator(scen, spec)
    ev.ensure([0b11, 0b11, 0b1100, 0])
    assert ev.solves == 2
    ev.ensure([0b11])
    assert ev.solves == 2
    assert ev.objective([0b11, 0b1100]) == math.fsum(
        [ev.solution(0b11).value, ev.solution(0b1100).value]
    )
    with pytest.raises(ContractError):
        CellEvaluator(scen, Selection(3, 1))


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.lists(st.integers(0, 9), min_size=4, max_size=4), min_size=2, max_size=9),
    st.integers(1, 3),
)
def test_exact_dominates_greedy_dominates_nominal(rows, p):
    scen = _set(rows)
    spec = Selection(4, p)
    for Q in (1, 2):
        ex = build_exact(scen, spec, BuildOptions(depth=Q)).total
        gr = build_greedy(scen, spec, BuildOptions(depth=Q)).total
        nominal = fit_leaves(scen, spec, Assignment([0] * len(rows), 1)).total
        assert ex <= gr <= nominal


def test_grid_exact_depth_two_runs():
    inst = gen_grid_instance(3, 3, 2, 0)
    scen = inst.sample(7, [0, 1])
    res = build_exact(scen, GridShortestPath(3, 3), BuildOptions(depth=2))
    sols = oracles.all_solutions(inst.spec)
    expected = oracles.brute_uniform_tree(scen.values, scen.cost_values, sols, 2)
    assert res.total == pytest.approx(expected, rel=1e-12)
