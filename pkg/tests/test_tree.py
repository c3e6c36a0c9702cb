import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from explainopt.builder import fit_leaves
from explainopt.errors import ContractError, ParseError, SchemaError, ValidationError
from explainopt.nominal import Selection, linear_cost
from explainopt.scenarios import Dimension, Kind, ScenarioSet
from explainopt.tree import (
    Criterion,
    DecisionTree,
    Origin,
    Split,
    Structure,
    aggregate,
    assign,
    dumps_tree,
    evaluate,
    leaf_sets,
    load_tree,
    loads_tree,
    render_rule,
    route,
    save_tree,
)

EXAMPLE_SPLITS = [Split(1, 5.5), Split(2, 6.0)]


def _vec(items, n=5):
    x = np.zeros(n, dtype=int)
    x[[i - 1 for i in items]] = 1
    return x


@pytest.fixture
def example_tree(portfolio):
    scen, spec = portfolio
    leaves = [_vec(s) for s in ({2, 3}, {2, 5}, {3, 5}, {1, 5})]
    return DecisionTree(2, EXAMPLE_SPLITS, leaves, problem=spec, dimension_names=tuple(scen.names))


def test_leaf_sets_depth_two():
    assert leaf_sets(2) == [frozenset({2, 3}), frozenset({1, 3})]


def test_leaf_sets_depth_one_and_three():
    assert leaf_sets(1) == [frozenset({1})]
    assert all(len(s) == 4 for s in leaf_sets(3))
    with pytest.raises(ContractError):
        leaf_sets(0)


def test_route_examples(example_tree, portfolio):
    scen, _ = portfolio
    leaf2 = route(example_tree, scen.values[1])
    assert leaf2 == 0b10
    assert set(np.flatnonzero(example_tree.leaves[leaf2]) + 1) == {3, 5}
    leaf8 = route(example_tree, scen.values[7])
    assert leaf8 == 0b01
    assert set(np.flatnonzero(example_tree.leaves[leaf8]) + 1) == {2, 5}


def test_threshold_equality_stays_left(example_tree):
    assert route(example_tree, np.array([0, 5.5, 6.0, 0, 0])) == 0


def test_assign_groups(example_tree, portfolio):
    scen, _ = portfolio
    groups = {frozenset(j + 1 for j in g) for g in assign(example_tree, scen).groups()}
    assert groups == {frozenset({1, 5}), frozenset({2, 3, 10}), frozenset({4, 8}), frozenset({6, 7, 9})}


def test_depth_zero_tree(portfolio):
    scen, spec = portfolio
    tree = DecisionTree(0, [], [_vec({1, 2})], problem=spec)
    assert set(assign(tree, scen).leaf_of.tolist()) == {0}
    one = scen.subset([0])
    cost = float(linear_cost(one.cost_values, tree.leaves[0])[0])
    assert evaluate(tree, one) == cost
    assert evaluate(tree, one, Criterion.WORST_CASE) == cost
    assert render_rule(tree).splitlines() == ["leaf 1 (always): {1, 2}"]


def test_example_tree_value_63(example_tree, portfolio):
    scen, _ = portfolio
    assert evaluate(example_tree, scen, sum_form=True) == 63
    assert evaluate(example_tree, scen) == pytest.approx(6.3, abs=1e-12)


def test_criteria():
    assert aggregate([3.0, 3.0, 3.0], [1 / 3] * 3, Criterion.VARIANCE) == pytest.approx(0.0, abs=1e-15)
    assert aggregate([1.0, 4.0], [0.5, 0.5], Criterion.WORST_CASE) == 4.0
    assert aggregate([1.0, 3.0], [0.5, 0.5], Criterion.VARIANCE) == 1.0


def test_render_example_tree(example_tree):
    lines = render_rule(example_tree).splitlines()
    assert lines[:2] == ["split 1: c2 <= 5.5 ?", "split 2: c3 <= 6 ?"]
    assert len(lines) == 6
    assert lines[5] == "leaf 4 (c2 > 5.5, c3 > 6): {1, 5}"


def test_render_per_node_and_fallback():
    tree = DecisionTree(
        2,
        [Split(0, 1.0), Split(1, 2.0), Split(0, 3.0)],
        [[1, 0], [0, 1], [1, 0], [0, 1]],
        origins=["fitted", "fitted", "fallback", "fitted"],
        structure="pernode",
    )
    lines = render_rule(tree, ["a", "b"]).splitlines()
    assert [ln.split(":")[0] for ln in lines[:3]] == ["node 1 (level 1)", "node 2 (level 2)", "node 3 (level 2)"]
    assert lines[3] == "leaf 1 (a <= 1, b <= 2): {1}"
    assert lines[5].endswith("[fallback]")
    with pytest.raises(ContractError):
        render_rule(tree, ["a"])


def test_per_node_routing():
    tree = DecisionTree(
        2, [Split(0, 0.5), Split(1, 0.5), Split(2, 0.5)], [[1]] * 4, structure=Structure.PER_NODE
    )
    rows = np.array([[0, 0, 1], [0, 1, 0], [1, 1, 0], [1, 0, 1]], dtype=float)
    assert [route(tree, r) for r in rows] == [0, 1, 2, 3]


def test_roundtrip(example_tree, tmp_path):
    path = tmp_path / "t.json"
    save_tree(example_tree, path)
    assert load_tree(path) == example_tree
    flagged = DecisionTree(1, [Split(0, 1)], [[1, 0], [0, 1]], origins=["fallback", "fitted"])
    assert loads_tree(dumps_tree(flagged)).origins == (Origin.FALLBACK, Origin.FITTED)


def test_wrong_leaf_count(example_tree):
    data = json.loads(dumps_tree(example_tree))
    data["leaves"] = data["leaves"][:3]
    with pytest.raises(SchemaError):
        loads_tree(json.dumps(data))


@pytest.mark.parametrize("bad", ['"NaN"', "NaN", "Infinity"])
def test_nan_threshold(example_tree, bad):
    text = dumps_tree(example_tree).replace('"threshold": 5.5', f'"threshold": {bad}')
    with pytest.raises(ParseError):
        loads_tree(text)


def test_infeasible_leaf(example_tree):
    data = json.loads(dumps_tree(example_tree))
    data["leaves"][0]["x"] = [1, 1, 1, 0, 0]
    with pytest.raises(ValidationError):
        loads_tree(json.dumps(data))


def test_split_count_checked():
    with pytest.raises(SchemaError):
        DecisionTree(2, [Split(0, 1)], [[1]] * 4)


_value_rows = st.lists(
    st.lists(st.integers(0, 9), min_size=3, max_size=3), min_size=1, max_size=12
)


@settings(max_examples=80, deadline=None)
@given(_value_rows, st.lists(st.tuples(st.integers(0, 2), st.integers(0, 9)), min_size=1, max_size=3))
def test_partition_and_encoding_consistency(rows, raw_splits):
    values = np.array(rows, dtype=float)
    splits = [Split(d, t + 0.5) for d, t in raw_splits]
    Q = len(splits)
    tree = DecisionTree(Q, splits, [[1, 0, 0]] * 2**Q)
    scen = ScenarioSet([Dimension(f"c{i}", Kind.COST) for i in range(3)], values)
    leaf_of = assign(tree, scen).leaf_of
    cells = sorted(j for g in assign(tree, scen).groups() for j in g)
    assert cells == list(range(len(rows)))
    S = leaf_sets(Q)
    for j, k in enumerate(leaf_of):
        for q, s in enumerate(splits):
            assert (k in S[q]) == (values[j, s.dimension] > s.threshold)


@settings(max_examples=60, deadline=None)
@given(_value_rows, st.integers(0, 2), st.integers(0, 9), st.sampled_from([0.5, 2.0, 3.0, 10.0]))
def test_scaling_invariance(rows, dim, t, lam):
    values = np.array(rows, dtype=float)
    spec = Selection(3, 1)
    dims = [Dimension(f"c{i}", Kind.COST) for i in range(3)]
    scen = ScenarioSet(dims, values)
    scaled = ScenarioSet(dims, values * lam)
    tree = DecisionTree(1, [Split(dim, t + 0.5)], [[1, 0, 0]] * 2, problem=spec)
    tree_s = DecisionTree(1, [Split(dim, (t + 0.5) * lam)], [[1, 0, 0]] * 2, problem=spec)
    a, b = assign(tree, scen), assign(tree_s, scaled)
    assert np.array_equal(a.leaf_of, b.leaf_of)
    fa, fb = fit_leaves(scen, spec, a), fit_leaves(scaled, spec, b)
    for x, y in zip(fa.solutions, fb.solutions):
        assert np.array_equal(x.x, y.x)


@settings(max_examples=60, deadline=None)
@given(_value_rows, st.lists(st.floats(0.01, 1), min_size=12, max_size=12))
def test_laplace_decomposition_identity(rows, raw_p):
    values = np.array(rows, dtype=float)
    N = len(rows)
    p = np.array(raw_p[:N])
    p = p / p.sum()
    scen = ScenarioSet([Dimension(f"c{i}", Kind.COST) for i in range(3)], values, p)
    tree = DecisionTree(1, [Split(0, 4.5)], [[1, 0, 0], [0, 0, 1]])
    by_leaf = 0.0
    for k, cell in enumerate(assign(tree, scen).cells()):
        by_leaf += float(np.sum(p[cell] * (values[cell] @ tree.leaves[k])))
    assert evaluate(tree, scen) == pytest.approx(by_leaf, rel=1e-12, abs=1e-12)
