"""Deterministic nominal problems ``min c^T x`` over binary ``x``.

Three problem classes are built in:

* :class:`Selection` -- pick exactly ``p`` of ``n`` items.
* :class:`GridShortestPath` -- source-sink path on a grid whose arcs point
  right and up, from the bottom-left to the top-right node.
* :class:`ExplicitDag` -- source-sink path on an arbitrary acyclic digraph.

Any object with ``n_vars``, ``solve_batch(C)``, ``is_feasible(x)`` and
``to_dict()`` can stand in for these; the builders only talk to that surface.

Grid arc numbering: node ``(row, col)`` has id ``row * width + col`` with row 0
at the bottom.  Horizontal arcs come first, row by row from the bottom and left
to right within a row; vertical arcs follow, again row by row and left to
right.  A ``w x h`` grid has ``h (w - 1) + w (h - 1)`` arcs.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ContractError, InfeasibleError, SchemaError


def linear_cost(C, x):
    """Row-wise ``C @ x`` with one fixed summation order.

    All cost evaluations in the package go through here so that equal
    solutions always produce bit-identical costs.
    """
    return np.multiply(C, np.asarray(x, dtype=float)).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class Solution:
    x: np.ndarray
    value: float

    def __post_init__(self):
        x = np.array(self.x, dtype=np.int8, copy=True)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "value", float(self.value))

    def __eq__(self, other):
        if not isinstance(other, Solution):
            return NotImplemented
        return np.array_equal(self.x, other.x) and self.value == other.value

    __hash__ = None

    @property
    def items(self):
        """1-based indices of the chosen variables."""
        return frozenset(int(i) + 1 for i in np.flatnonzero(self.x))

    def __repr__(self):
        return f"Solution({{{', '.join(map(str, sorted(self.items)))}}}, value={self.value:g})"


def _as_cost_matrix(spec, C):
    C = np.asarray(C, dtype=float)
    if C.ndim == 1:
        C = C[None, :]
    if C.ndim != 2 or C.shape[1] != spec.n_vars:
        raise ContractError(
            f"cost vector length {C.shape[-1]} does not match {spec.n_vars} problem variables"
        )
    return C


@dataclass(frozen=True)
class Selection:
    n: int
    p: int

    kind = "selection"

    def __post_init__(self):
        if not 1 <= self.p <= self.n:
            raise SchemaError(f"selection needs 1 <= p <= n, got n={self.n}, p={self.p}")

    @property
    def n_vars(self):
        return self.n

    def solve_batch(self, C):
        C = _as_cost_matrix(self, C)
        # stable sort: equal costs keep index order
        picked = np.argsort(C, axis=1, kind="stable")[:, : self.p]
        X = np.zeros(C.shape, dtype=np.int8)
        np.put_along_axis(X, picked, 1, axis=1)
        return X, linear_cost(C, X)

    def is_feasible(self, x):
        x = np.asarray(x)
        return x.shape == (self.n,) and bool(np.all((x == 0) | (x == 1))) and int(x.sum()) == self.p

    def to_dict(self):
        return {"type": "selection", "n": self.n, "p": self.p}


class _PathProblem:
    """Shared dynamic program for source-sink paths on acyclic digraphs."""

    # subclasses provide n_nodes, arc_list, source, sink

    @property
    def n_vars(self):
        return len(self.arc_list)

    @cached_property
    def _plan(self):
        arcs = np.asarray(self.arc_list, dtype=int).reshape(-1, 2)
        tails, heads = arcs[:, 0], arcs[:, 1]
        incoming = [[] for _ in range(self.n_nodes)]
        outgoing = [[] for _ in range(self.n_nodes)]
        for a, (t, h) in enumerate(arcs):
            incoming[h].append(a)
            outgoing[t].append(a)
        order = topological_order(self.n_nodes, arcs)
        if order is None:
            raise SchemaError("arcs contain a directed cycle")
        pos = np.empty(self.n_nodes, dtype=int)
        pos[order] = np.arange(self.n_nodes)
        steps = [
            (v, np.array(incoming[v], dtype=int))
            for v in order[pos[self.source] + 1 :]
            if incoming[v]
        ]
        return tails, heads, steps, incoming, outgoing

    def solve_batch(self, C):
        C = _as_cost_matrix(self, C)
        tails, _, steps, _, _ = self._plan
        B = C.shape[0]
        rows = np.arange(B)
        dist = np.full((B, self.n_nodes), np.inf)
        dist[:, self.source] = 0.0
        pred = np.full((B, self.n_nodes), -1, dtype=int)
        for v, inc in steps:
            cand = dist[:, tails[inc]] + C[:, inc]
            # argmin returns the first minimum, i.e. the smallest arc index
            k = np.argmin(cand, axis=1)
            best = cand[rows, k]
            dist[:, v] = best
            pred[:, v] = np.where(np.isfinite(best), inc[k], -1)
        if not np.all(np.isfinite(dist[:, self.sink])):
            raise InfeasibleError("sink is not reachable from source")
        X = np.zeros(C.shape, dtype=np.int8)
        node = np.full(B, self.sink)
        active = node != self.source
        while np.any(active):
            a = pred[rows[active], node[active]]
            X[rows[active], a] = 1
            node[active] = tails[a]
            active = node != self.source
        return X, linear_cost(C, X)

    def is_feasible(self, x):
        x = np.asarray(x)
        if x.shape != (self.n_vars,) or not np.all((x == 0) | (x == 1)):
            return False
        tails, heads, _, _, _ = self._plan
        balance = np.zeros(self.n_nodes, dtype=int)
        np.add.at(balance, tails, x.astype(int))
        np.subtract.at(balance, heads, x.astype(int))
        expected = np.zeros(self.n_nodes, dtype=int)
        expected[self.source] += 1
        expected[self.sink] -= 1
        # acyclic graph: unit flow with balanced nodes is a single simple path
        return bool(np.array_equal(balance, expected))

    def flow_structure(self):
        """Per-node lists of outgoing and incoming arc indices."""
        _, _, _, incoming, outgoing = self._plan
        return outgoing, incoming


@dataclass(frozen=True)
class GridShortestPath(_PathProblem):
    width: int
    height: int

    kind = "grid"

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise SchemaError("grid width and height must be at least 2")

    @property
    def n_nodes(self):
        return self.width * self.height

    @property
    def source(self):
        return 0

    @property
    def sink(self):
        return self.n_nodes - 1

    @cached_property
    def arc_list(self):
        return tuple(grid_arcs(self.width, self.height))

    def to_dict(self):
        return {"type": "grid", "width": self.width, "height": self.height}


@dataclass(frozen=True)
class ExplicitDag(_PathProblem):
    n_nodes: int
    arcs: tuple
    source: int
    sink: int

    kind = "dag"

    def __post_init__(self):
        arcs = tuple((int(t), int(h)) for t, h in self.arcs)
        object.__setattr__(self, "arcs", arcs)
        if self.n_nodes < 1:
            raise SchemaError("a DAG needs at least one node")
        for t, h in arcs:
            if not (0 <= t < self.n_nodes and 0 <= h < self.n_nodes):
                raise SchemaError(f"arc ({t}, {h}) references an unknown node")
        if not (0 <= self.source < self.n_nodes and 0 <= self.sink < self.n_nodes):
            raise SchemaError("source or sink out of range")
        if self.source == self.sink:
            raise SchemaError("source and sink must differ")
        self._plan  # cycle check
        if not _reachable(self.n_nodes, arcs, self.source, self.sink):
            raise InfeasibleError("sink is not reachable from source")

    @property
    def arc_list(self):
        return self.arcs

    def to_dict(self):
        return {
            "type": "dag",
            "n_nodes": self.n_nodes,
            "arcs": [list(a) for a in self.arcs],
            "source": self.source,
            "sink": self.sink,
        }


def grid_arcs(width, height):
    arcs = []
    for r in range(height):
        for c in range(width - 1):
            arcs.append((r * width + c, r * width + c + 1))
    for r in range(height - 1):
        for c in range(width):
            arcs.append((r * width + c, (r + 1) * width + c))
    return arcs


def topological_order(n_nodes, arcs):
    """Kahn's algorithm, smallest ready node first; ``None`` on a cycle."""
    import heapq

    indeg = [0] * n_nodes
    out = [[] for _ in range(n_nodes)]
    for t, h in arcs:
        out[t].append(h)
        indeg[h] += 1
    ready = [v for v in range(n_nodes) if indeg[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for h in out[v]:
            indeg[h] -= 1
            if indeg[h] == 0:
                heapq.heappush(ready, h)
    return order if len(order) == n_nodes else None


def _reachable(n_nodes, arcs, source, sink):
    out = [[] for _ in range(n_nodes)]
    for t, h in arcs:
        out[t].append(h)
    seen = {source}
    stack = [source]
    while stack:
        v = stack.pop()
        for h in out[v]:
            if h not in seen:
                seen.add(h)
                stack.append(h)
    return sink in seen


def problem_from_dict(data):
    kind = data.get("type")
    try:
        if kind == "selection":
            return Selection(int(data["n"]), int(data["p"]))
        if kind == "grid":
            return GridShortestPath(int(data["width"]), int(data["height"]))
        if kind == "dag":
            return ExplicitDag(
                int(data["n_nodes"]),
                tuple(tuple(a) for a in data["arcs"]),
                int(data["source"]),
                int(data["sink"]),
            )
    except KeyError as exc:
        raise SchemaError(f"problem of type {kind!r} is missing field {exc.args[0]!r}") from None
    raise SchemaError(f"unknown problem type {kind!r}")


def solve_batch(spec, C):
    """Solve one nominal problem per row of ``C``; returns ``(X, values)``."""
    return spec.solve_batch(C)


def solve_nominal(spec, c):
    c = np.asarray(c, dtype=float)
    if c.ndim != 1:
        raise ContractError("solve_nominal expects a single cost vector")
    X, values = spec.solve_batch(c)
    return Solution(X[0], values[0])


def solution_cost(spec, x, scenario_row, cost_indices=None):
    """Cost ``c_j^T x`` of a solution in one scenario.

    ``scenario_row`` is either a cost vector of length ``spec.n_vars`` or a full
    scenario row, in which case ``cost_indices`` picks out the cost columns.
    """
    x = x.x if isinstance(x, Solution) else np.asarray(x)
    row = np.asarray(scenario_row, dtype=float)
    if cost_indices is not None:
        row = row[np.asarray(cost_indices)]
    if row.shape != (spec.n_vars,) or x.shape != (spec.n_vars,):
        raise ContractError("dimension mismatch between solution and scenario")
    return float(linear_cost(row[None, :], x)[0])


def per_scenario_optimum(spec, scenarios):
    """Optimal value of every scenario solved on its own."""
    _, values = spec.solve_batch(scenarios.cost_values)
    return values


def scenario_costs(scenarios, x):
    """Cost of one solution in every scenario of a set."""
    x = x.x if isinstance(x, Solution) else x
    return linear_cost(scenarios.cost_values, x)
