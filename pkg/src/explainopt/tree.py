"""Explanatory rules: shallow binary decision trees routing scenarios to solutions.

Leaves are numbered from 0.  A scenario's leaf id is read off its split
outcomes as a binary number, the first level being the most significant bit:
bit ``q`` is 1 exactly when the queried value is strictly greater than the
threshold.  A value equal to the threshold stays on the 0 ("<=") side.

Level-uniform trees apply the same split to every node of a level.  Per-node
trees store one split per internal node in level order (root first, children
of node ``v`` at ``2v + 1`` and ``2v + 2``).
"""

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .errors import ContractError, ParseError, SchemaError, ValidationError
from .nominal import linear_cost, problem_from_dict

FORMAT_VERSION = 1


class Structure(str, Enum):
    LEVEL_UNIFORM = "uniform"
    PER_NODE = "pernode"


class Origin(str, Enum):
    FITTED = "fitted"
    FALLBACK = "fallback"


class Criterion(str, Enum):
    LAPLACE = "laplace"
    WORST_CASE = "worst"
    VARIANCE = "variance"


@dataclass(frozen=True)
class Split:
    dimension: int
    threshold: float

    def __post_init__(self):
        if int(self.dimension) < 0:
            raise ContractError("split dimension must be a nonnegative index")
        t = float(self.threshold)
        if not math.isfinite(t):
            raise ContractError(f"split threshold must be finite, got {self.threshold!r}")
        object.__setattr__(self, "dimension", int(self.dimension))
        object.__setattr__(self, "threshold", t)


def n_internal(depth, structure):
    return depth if Structure(structure) is Structure.LEVEL_UNIFORM else 2**depth - 1


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Depth-``Q`` tree with ``2**Q`` leaf solutions (binary vectors)."""

    depth: int
    splits: tuple
    leaves: tuple
    origins: tuple = None
    structure: Structure = Structure.LEVEL_UNIFORM
    problem: object = None
    dimension_names: tuple = None

    def __post_init__(self):
        depth = int(self.depth)
        if depth < 0:
            raise SchemaError("tree depth must be nonnegative")
        structure = Structure(self.structure)
        splits = tuple(s if isinstance(s, Split) else Split(*s) for s in self.splits)
        if len(splits) != n_internal(depth, structure):
            raise SchemaError(
                f"a {structure.value} tree of depth {depth} needs "
                f"{n_internal(depth, structure)} splits, got {len(splits)}"
            )
        leaves = []
        for x in self.leaves:
            x = np.array(getattr(x, "x", x), dtype=np.int8, copy=True)
            x.setflags(write=False)
            leaves.append(x)
        if len(leaves) != 2**depth:
            raise SchemaError(f"depth {depth} needs {2**depth} leaves, got {len(leaves)}")
        origins = self.origins
        if origins is None:
            origins = (Origin.FITTED,) * len(leaves)
        origins = tuple(Origin(o) for o in origins)
        if len(origins) != len(leaves):
            raise SchemaError("one origin flag per leaf is required")
        if self.problem is not None:
            for k, x in enumerate(leaves):
                if not self.problem.is_feasible(x):
                    raise ValidationError(f"leaf {k} holds an infeasible solution")
        names = tuple(self.dimension_names) if self.dimension_names is not None else None
        if names is not None:
            for s in splits:
                if s.dimension >= len(names):
                    raise SchemaError(f"split dimension {s.dimension} out of range")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "structure", structure)
        object.__setattr__(self, "splits", splits)
        object.__setattr__(self, "leaves", tuple(leaves))
        object.__setattr__(self, "origins", origins)
        object.__setattr__(self, "dimension_names", names)

    @property
    def n_leaves(self):
        return 2**self.depth

    def __eq__(self, other):
        if not isinstance(other, DecisionTree):
            return NotImplemented
        return (
            self.depth == other.depth
            and self.structure == other.structure
            and self.splits == other.splits
            and self.origins == other.origins
            and all(np.array_equal(a, b) for a, b in zip(self.leaves, other.leaves))
            and _problem_key(self.problem) == _problem_key(other.problem)
            and self.dimension_names == other.dimension_names
        )

    __hash__ = None


def _problem_key(problem):
    return None if problem is None else problem.to_dict()


@dataclass(frozen=True, eq=False)
class Assignment:
    leaf_of: np.ndarray
    n_leaves: int

    def __post_init__(self):
        leaf_of = np.array(self.leaf_of, dtype=int, copy=True)
        if leaf_of.ndim != 1:
            raise ContractError("assignment must be a vector")
        if leaf_of.size and (leaf_of.min() < 0 or leaf_of.max() >= self.n_leaves):
            raise ContractError("leaf index out of range")
        leaf_of.setflags(write=False)
        object.__setattr__(self, "leaf_of", leaf_of)

    def cells(self):
        """Scenario indices routed to each leaf (possibly empty)."""
        return [np.flatnonzero(self.leaf_of == k) for k in range(self.n_leaves)]

    def groups(self):
        """Nonempty cells as sets of scenario indices, in leaf order."""
        return [frozenset(int(j) for j in c) for c in self.cells() if c.size]


def leaf_sets(depth):
    """``S_q`` for q = 1..Q: leaves whose q-th most significant bit is 1."""
    if depth < 1:
        raise ContractError("leaf_sets needs depth >= 1")
    K = 2**depth
    return [frozenset(k for k in range(K) if (k >> (depth - q)) & 1) for q in range(1, depth + 1)]


def route_splits(splits, structure, depth, values):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[None, :]
    n = values.shape[0]
    if depth == 0:
        return np.zeros(n, dtype=int)
    if Structure(structure) is Structure.LEVEL_UNIFORM:
        leaf = np.zeros(n, dtype=int)
        for s in splits:
            leaf = 2 * leaf + (values[:, s.dimension] > s.threshold)
        return leaf
    dims = np.array([s.dimension for s in splits])
    thr = np.array([s.threshold for s in splits])
    rows = np.arange(n)
    node = np.zeros(n, dtype=int)
    for _ in range(depth):
        right = values[rows, dims[node]] > thr[node]
        node = 2 * node + 1 + right
    return node - (2**depth - 1)


def route_matrix(tree, values):
    """Leaf id for every row of ``values`` (rows cover all dimensions)."""
    return route_splits(tree.splits, tree.structure, tree.depth, values)


def route(tree, scenario_row):
    return int(route_matrix(tree, scenario_row)[0])


def assign(tree, scenarios):
    return Assignment(route_matrix(tree, scenarios.values), tree.n_leaves)


def allocated_costs(tree, scenarios, assignment=None):
    """Cost of the routed leaf solution in every scenario."""
    if assignment is None:
        assignment = assign(tree, scenarios)
    C = scenarios.cost_values
    out = np.empty(scenarios.n_scenarios)
    for k, cell in enumerate(assignment.cells()):
        if cell.size:
            out[cell] = linear_cost(C[cell], tree.leaves[k])
    return out


def aggregate(costs, probabilities, criterion=Criterion.LAPLACE, sum_form=False):
    """Apply a decision criterion to per-scenario costs.

    ``sum_form`` makes the Laplace criterion an unweighted plain sum.
    """
    criterion = Criterion(criterion)
    costs = np.asarray(costs, dtype=float)
    p = np.asarray(probabilities, dtype=float)
    if criterion is Criterion.LAPLACE:
        return math.fsum(costs) if sum_form else math.fsum(p * costs)
    if criterion is Criterion.WORST_CASE:
        return float(costs.max())
    mean = math.fsum(p * costs)
    return math.fsum(p * (costs - mean) ** 2)


def evaluate(tree, scenarios, criterion=Criterion.LAPLACE, sum_form=False):
    """Aggregate cost of the rule over a scenario set.

    Laplace gives the expected cost ``sum_j p_j C_j``, or the plain sum
    ``sum_j C_j`` with ``sum_form=True``.
    """
    costs = allocated_costs(tree, scenarios)
    return aggregate(costs, scenarios.probabilities, criterion, sum_form)


def _fmt(t):
    return f"{t:.12g}"


def _dim_name(tree, i, names):
    names = names if names is not None else tree.dimension_names
    return names[i] if names is not None else f"dim{i}"


def _solution_text(x):
    return "{" + ", ".join(str(i + 1) for i in np.flatnonzero(x)) + "}"


def render_rule(tree, dimension_names=None):
    """Human-readable rule: one line per split, then one line per leaf."""
    names = tuple(dimension_names) if dimension_names is not None else None
    if names is not None and any(s.dimension >= len(names) for s in tree.splits):
        raise ContractError(f"{len(names)} dimension names do not cover every split")
    Q = tree.depth
    lines = []

    def cond(split, bit):
        op = ">" if bit else "<="
        return f"{_dim_name(tree, split.dimension, names)} {op} {_fmt(split.threshold)}"

    if tree.structure is Structure.LEVEL_UNIFORM:
        for q, s in enumerate(tree.splits, 1):
            lines.append(
                f"split {q}: {_dim_name(tree, s.dimension, names)} <= {_fmt(s.threshold)} ?"
            )
        paths = []
        for k in range(tree.n_leaves):
            bits = [(k >> (Q - q)) & 1 for q in range(1, Q + 1)]
            paths.append([cond(s, b) for s, b in zip(tree.splits, bits)])
    else:
        for v, s in enumerate(tree.splits):
            level = (v + 1).bit_length()
            lines.append(
                f"node {v + 1} (level {level}): "
                f"{_dim_name(tree, s.dimension, names)} <= {_fmt(s.threshold)} ?"
            )
        paths = []
        for k in range(tree.n_leaves):
            node, path = 0, []
            for q in range(1, Q + 1):
                b = (k >> (Q - q)) & 1
                path.append(cond(tree.splits[node], b))
                node = 2 * node + 1 + b
            paths.append(path)
    for k, path in enumerate(paths):
        where = ", ".join(path) if path else "always"
        flag = " [fallback]" if tree.origins[k] is Origin.FALLBACK else ""
        lines.append(f"leaf {k + 1} ({where}): {_solution_text(tree.leaves[k])}{flag}")
    return "\n".join(lines)


def tree_to_dict(tree):
    return {
        "format_version": FORMAT_VERSION,
        "depth": tree.depth,
        "structure": tree.structure.value,
        "splits": [{"dim": s.dimension, "threshold": s.threshold} for s in tree.splits],
        "leaves": [
            {"x": [int(v) for v in x], "origin": o.value}
            for x, o in zip(tree.leaves, tree.origins)
        ],
        "problem": _problem_key(tree.problem),
        "dimension_names": list(tree.dimension_names) if tree.dimension_names else None,
    }


def _reject_constant(name):
    raise ParseError(f"non-finite number {name} in tree file")


def _number(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{what} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ParseError(f"{what} must be finite")
    return value


def tree_from_dict(data):
    try:
        depth = int(data["depth"])
        structure = Structure(data.get("structure", "uniform"))
        splits = [
            Split(int(_number(s["dim"], "split dim")), _number(s["threshold"], "threshold"))
            for s in data["splits"]
        ]
        leaves = [leaf["x"] for leaf in data["leaves"]]
        origins = [leaf.get("origin", "fitted") for leaf in data["leaves"]]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed tree file: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise SchemaError(f"malformed tree file: {exc}") from None
    problem = data.get("problem")
    problem = problem_from_dict(problem) if problem is not None else None
    for x in leaves:
        if problem is not None and len(x) != problem.n_vars:
            raise SchemaError("leaf vector length does not match the problem")
    return DecisionTree(
        depth, splits, leaves, origins, structure, problem, data.get("dimension_names")
    )


def dumps_tree(tree):
    return json.dumps(tree_to_dict(tree), indent=2, allow_nan=False) + "\n"


def save_tree(tree, path):
    return atomic_write_text(path, dumps_tree(tree))


def loads_tree(text):
    try:
        data = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    return tree_from_dict(data)


def load_tree(path):
    return loads_tree(Path(path).read_text(encoding="utf-8"))
