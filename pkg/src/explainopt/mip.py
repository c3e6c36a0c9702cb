"""Mixed-integer models for optimal explanatory trees, emitted symbolically.

Variable blocks, in declaration order:

``a_k_j``  scenario j is routed to leaf k (binary, K x N)
``d_q_i``  split q queries dimension i (binary; feature dimensions included)
``b_q``    threshold of split q, bounded by the observed value range
``x_k_i``  leaf k's solution (binary, K x n)
``z_j``    cost of scenario j under its leaf (linearizes the Laplace objective)

followed by variant-specific blocks.  All indices in names are 1-based.
Constraint names start with a family tag (``assign``, ``pick``, ``le``,
``gt``, ``link``, ``card``/``flow``, ...), so family counts survive an LP
round trip.

Big-M and epsilon are derived from the data:

* ``eps`` is half the smallest gap between consecutive distinct values of
  any dimension (at least 1e-6); every midpoint threshold clears it.
* ``M = span + max(1, eps)`` where ``span`` is the range of all observed
  values, which keeps the inactive threshold row slack for any ``b`` inside
  its bounds.
* ``Mz`` bounds ``|c_j^T x|`` via the absolute cost sum of each scenario.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, SchemaError
from .nominal import GridShortestPath, ExplicitDag, Selection, linear_cost
from .tree import Structure, assign, leaf_sets

SENSES = ("<=", ">=", "=")


@dataclass
class Variable:
    name: str
    kind: str = "continuous"
    lb: float = 0.0
    ub: float = math.inf

    def __post_init__(self):
        if self.kind not in ("binary", "continuous"):
            raise ContractError(f"unknown variable kind {self.kind!r}")
        if self.kind == "binary":
            self.lb, self.ub = 0.0, 1.0


@dataclass
class Constraint:
    name: str
    coeffs: dict
    sense: str
    rhs: float

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ContractError(f"unknown constraint sense {self.sense!r}")

    @property
    def family(self):
        return self.name.split("_", 1)[0]


@dataclass
class MipModel:
    name: str = "model"
    variables: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)
    sense: str = "minimize"
    constants: dict = field(default_factory=dict)

    def add_var(self, name, kind="continuous", lb=0.0, ub=math.inf):
        if name in self.variables:
            raise ContractError(f"duplicate variable {name!r}")
        self.variables[name] = Variable(name, kind, lb, ub)

    def add_constraint(self, name, coeffs, sense, rhs):
        for v in coeffs:
            if v not in self.variables:
                raise ContractError(f"constraint {name!r} uses undeclared variable {v!r}")
        self.constraints.append(Constraint(name, dict(coeffs), sense, float(rhs)))

    def family_counts(self):
        counts = {}
        for c in self.constraints:
            counts[c.family] = counts.get(c.family, 0) + 1
        return counts

    def block_counts(self):
        counts = {}
        for v in self.variables:
            block = v.split("_", 1)[0]
            counts[block] = counts.get(block, 0) + 1
        return counts

    def __eq__(self, other):
        if not isinstance(other, MipModel):
            return NotImplemented
        return (
            self.variables == other.variables
            and self.constraints == other.constraints
            and self.objective == other.objective
            and self.sense == other.sense
        )


def model_constants(scenarios):
    V = scenarios.values
    vmin, vmax = float(V.min()), float(V.max())
    gaps = []
    for i in range(V.shape[1]):
        u = np.unique(V[:, i])
        if u.size > 1:
            gaps.append(float(np.diff(u).min()))
    eps = max(1e-6, min(gaps) / 2) if gaps else 1e-6
    C = scenarios.cost_values
    Mz = float(np.abs(C).sum(axis=1).max())
    z_lb = float(np.minimum(C, 0).sum(axis=1).min())
    return {
        "vmin": vmin,
        "vmax": vmax,
        "eps": eps,
        "M": (vmax - vmin) + max(1.0, eps),
        "Mz": Mz,
        "z_lb": z_lb,
        "maxabs": float(np.abs(V).max()),
    }


def _objective_weights(scenarios):
    return scenarios.weights


def _domain_rows(model, spec, K):
    if isinstance(spec, Selection):
        for k in range(1, K + 1):
            model.add_constraint(
                f"card_{k}", {f"x_{k}_{i}": 1.0 for i in range(1, spec.n + 1)}, "=", spec.p
            )
        return
    if isinstance(spec, (GridShortestPath, ExplicitDag)):
        outgoing, incoming = spec.flow_structure()
        for k in range(1, K + 1):
            for v in range(spec.n_nodes):
                coeffs = {}
                for a in outgoing[v]:
                    coeffs[f"x_{k}_{a + 1}"] = 1.0
                for a in incoming[v]:
                    coeffs[f"x_{k}_{a + 1}"] = coeffs.get(f"x_{k}_{a + 1}", 0.0) - 1.0
                rhs = (v == spec.source) - (v == spec.sink)
                if coeffs:
                    model.add_constraint(f"flow_{k}_{v + 1}", coeffs, "=", rhs)
        return
    raise ContractError(f"cannot emit a model for problem type {type(spec).__name__}")


def _check_inputs(scenarios, spec, depth):
    if depth < 1:
        raise ContractError("model depth must be at least 1")
    if scenarios.n_costs != spec.n_vars:
        raise ContractError("scenario cost dimensions do not match the problem")
    if not isinstance(spec, (Selection, GridShortestPath, ExplicitDag)):
        raise ContractError(f"cannot emit a model for problem type {type(spec).__name__}")


def _declare_core(model, scenarios, spec, K, n_nodes, const, b_bounds):
    N, n_dims, n = scenarios.n_scenarios, len(scenarios.dimensions), spec.n_vars
    for k in range(1, K + 1):
        for j in range(1, N + 1):
            model.add_var(f"a_{k}_{j}", "binary")
    for q in range(1, n_nodes + 1):
        for i in range(1, n_dims + 1):
            model.add_var(f"d_{q}_{i}", "binary")
    for q in range(1, n_nodes + 1):
        model.add_var(f"b_{q}", "continuous", *b_bounds)
    for k in range(1, K + 1):
        for i in range(1, n + 1):
            model.add_var(f"x_{k}_{i}", "binary")
    for j in range(1, N + 1):
        model.add_var(f"z_{j}", "continuous", const["z_lb"], math.inf)
    w = _objective_weights(scenarios)
    model.objective = {f"z_{j}": float(w[j - 1]) for j in range(1, N + 1)}


def _assign_rows(model, N, K):
    for j in range(1, N + 1):
        model.add_constraint(f"assign_{j}", {f"a_{k}_{j}": 1.0 for k in range(1, K + 1)}, "=", 1)


def _query(scenarios, q, j):
    row = scenarios.values[j - 1]
    return {f"d_{q}_{i + 1}": float(row[i]) for i in range(len(row)) if row[i] != 0}


def _link_rows(model, scenarios, spec, K, const):
    C = scenarios.cost_values
    Mz = const["Mz"]
    for k in range(1, K + 1):
        for j in range(1, scenarios.n_scenarios + 1):
            coeffs = {f"x_{k}_{i + 1}": float(c) for i, c in enumerate(C[j - 1]) if c != 0}
            coeffs[f"z_{j}"] = -1.0
            coeffs[f"a_{k}_{j}"] = Mz
            model.add_constraint(f"link_{k}_{j}", coeffs, "<=", Mz)


def _threshold_rows(model, scenarios, Q, const, query):
    """Rows pairing split outcome and leaf membership for level-uniform splits.

    ``query(q, j)`` returns the coefficient map of the queried value.
    """
    N, K = scenarios.n_scenarios, 2**Q
    M, eps = const["M"], const["eps"]
    S = leaf_sets(Q)
    for q in range(1, Q + 1):
        for j in range(1, N + 1):
            coeffs = dict(query(q, j))
            coeffs[f"b_{q}"] = coeffs.get(f"b_{q}", 0.0) - 1.0
            for k in sorted(S[q - 1]):
                coeffs[f"a_{k + 1}_{j}"] = -M
            model.add_constraint(f"le_{q}_{j}", coeffs, "<=", 0.0)
    for q in range(1, Q + 1):
        for j in range(1, N + 1):
            coeffs = dict(query(q, j))
            coeffs[f"b_{q}"] = coeffs.get(f"b_{q}", 0.0) - 1.0
            for k in sorted(S[q - 1]):
                coeffs[f"a_{k + 1}_{j}"] = -M
            model.add_constraint(f"gt_{q}_{j}", coeffs, ">=", eps - M)


def emit_main(scenarios, spec, Q):
    """Level-uniform univariate tree model with linearized Laplace objective."""
    _check_inputs(scenarios, spec, Q)
    K, N, n_dims = 2**Q, scenarios.n_scenarios, len(scenarios.dimensions)
    const = model_constants(scenarios)
    model = MipModel(name=f"tree_main_Q{Q}", constants=const)
    _declare_core(model, scenarios, spec, K, Q, const, (const["vmin"], const["vmax"]))
    _assign_rows(model, N, K)
    for q in range(1, Q + 1):
        model.add_constraint(f"pick_{q}", {f"d_{q}_{i}": 1.0 for i in range(1, n_dims + 1)}, "=", 1)
    _threshold_rows(model, scenarios, Q, const, lambda q, j: _query(scenarios, q, j))
    _link_rows(model, scenarios, spec, K, const)
    _domain_rows(model, spec, K)
    return model


def emit_multivariate(scenarios, spec, Q, P):
    """Oblique splits with at most ``P`` nonzero, L1-normalized coefficients.

    Each coefficient is ``lp - lm`` with both parts in [0, 1]; a sign binary
    ``s`` forbids both parts being positive, so ``lp + lm`` is the absolute
    value exactly.
    """
    if P < 1:
        raise ContractError("P must be at least 1")
    _check_inputs(scenarios, spec, Q)
    K, N, n_dims = 2**Q, scenarios.n_scenarios, len(scenarios.dimensions)
    const = model_constants(scenarios)
    const["M"] = 2 * const["maxabs"] + max(1.0, const["eps"])
    model = MipModel(name=f"tree_multivariate_Q{Q}_P{P}", constants=const)
    _declare_core(model, scenarios, spec, K, Q, const, (-const["maxabs"], const["maxabs"]))
    for block, kind in (("lp", "continuous"), ("lm", "continuous"), ("s", "binary")):
        for q in range(1, Q + 1):
            for i in range(1, n_dims + 1):
                model.add_var(f"{block}_{q}_{i}", kind, 0.0, 1.0)
    _assign_rows(model, N, K)
    for q in range(1, Q + 1):
        model.add_constraint(
            f"nnz_{q}", {f"d_{q}_{i}": 1.0 for i in range(1, n_dims + 1)}, "<=", P
        )
    for q in range(1, Q + 1):
        for i in range(1, n_dims + 1):
            model.add_constraint(
                f"abs_{q}_{i}", {f"lp_{q}_{i}": 1.0, f"lm_{q}_{i}": 1.0, f"d_{q}_{i}": -1.0}, "<=", 0
            )
    for q in range(1, Q + 1):
        for i in range(1, n_dims + 1):
            model.add_constraint(f"sgp_{q}_{i}", {f"lp_{q}_{i}": 1.0, f"s_{q}_{i}": -1.0}, "<=", 0)
            model.add_constraint(f"sgm_{q}_{i}", {f"lm_{q}_{i}": 1.0, f"s_{q}_{i}": 1.0}, "<=", 1)
    for q in range(1, Q + 1):
        coeffs = {}
        for i in range(1, n_dims + 1):
            coeffs[f"lp_{q}_{i}"] = 1.0
            coeffs[f"lm_{q}_{i}"] = 1.0
        model.add_constraint(f"norm_{q}", coeffs, "=", 1)

    def query(q, j):
        row = scenarios.values[j - 1]
        coeffs = {}
        for i, v in enumerate(row, 1):
            if v != 0:
                coeffs[f"lp_{q}_{i}"] = float(v)
                coeffs[f"lm_{q}_{i}"] = -float(v)
        return coeffs

    _threshold_rows(model, scenarios, Q, const, query)
    _link_rows(model, scenarios, spec, K, const)
    _domain_rows(model, spec, K)
    return model


def leaf_paths(Q):
    """For each leaf, the (node, went_right) pairs on its root path.

    Nodes are numbered 0.. in level order.
    """
    paths = []
    for k in range(2**Q):
        node, path = 0, []
        for q in range(1, Q + 1):
            bit = (k >> (Q - q)) & 1
            path.append((node, bit))
            node = 2 * node + 1 + bit
        paths.append(path)
    return paths


def emit_per_node(scenarios, spec, Q):
    """Tree with an individual univariate split at each of the K - 1 nodes."""
    _check_inputs(scenarios, spec, Q)
    K, N, n_dims = 2**Q, scenarios.n_scenarios, len(scenarios.dimensions)
    n_nodes = K - 1
    const = model_constants(scenarios)
    M, eps = const["M"], const["eps"]
    model = MipModel(name=f"tree_pernode_Q{Q}", constants=const)
    _declare_core(model, scenarios, spec, K, n_nodes, const, (const["vmin"], const["vmax"]))
    _assign_rows(model, N, K)
    for v in range(1, n_nodes + 1):
        model.add_constraint(f"pick_{v}", {f"d_{v}_{i}": 1.0 for i in range(1, n_dims + 1)}, "=", 1)
    paths = leaf_paths(Q)
    for k in range(1, K + 1):
        for node, bit in paths[k - 1]:
            v = node + 1
            for j in range(1, N + 1):
                coeffs = _query(scenarios, v, j)
                coeffs[f"b_{v}"] = -1.0
                if bit == 0:
                    coeffs[f"a_{k}_{j}"] = M
                    model.add_constraint(f"left_{v}_{k}_{j}", coeffs, "<=", M)
                else:
                    coeffs[f"a_{k}_{j}"] = -M
                    model.add_constraint(f"right_{v}_{k}_{j}", coeffs, ">=", eps - M)
    _link_rows(model, scenarios, spec, K, const)
    _domain_rows(model, spec, K)
    return model


def emit_constraint_uncertainty(scenarios, spec, Q, systems, violation_budget=0.0):
    """Add scenario-specific feasibility ``A^j x^k <= b^j`` for routed leaves.

    ``systems`` holds one ``(A, b)`` pair per scenario.  With a positive
    ``violation_budget`` scenarios may be exempted through binaries ``g_j``
    whose probability mass is capped by the budget.
    """
    if not 0 <= violation_budget <= 1:
        raise ContractError("violation budget must lie in [0, 1]")
    N, n, K = scenarios.n_scenarios, spec.n_vars, 2**Q
    if len(systems) != N:
        raise SchemaError(f"expected {N} constraint systems, got {len(systems)}")
    mats = []
    for j, (A, b) in enumerate(systems, 1):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if A.shape[1] != n or A.shape[0] != b.shape[0]:
            raise SchemaError(f"constraint system of scenario {j} has shape {A.shape}/{b.shape}")
        mats.append((A, b))
    model = emit_main(scenarios, spec, Q)
    model.name = f"tree_cu_Q{Q}"
    relax = violation_budget > 0
    if relax:
        for j in range(1, N + 1):
            model.add_var(f"g_{j}", "binary")
    for k in range(1, K + 1):
        for j, (A, b) in enumerate(mats, 1):
            for r in range(A.shape[0]):
                Mr = max(0.0, float(np.clip(A[r], 0, None).sum() - b[r]))
                coeffs = {f"x_{k}_{i + 1}": float(c) for i, c in enumerate(A[r]) if c != 0}
                coeffs[f"a_{k}_{j}"] = Mr
                if relax:
                    coeffs[f"g_{j}"] = -Mr
                model.add_constraint(f"cu_{k}_{j}_{r + 1}", coeffs, "<=", float(b[r]) + Mr)
    if relax:
        p = scenarios.probabilities
        model.add_constraint(
            "budget", {f"g_{j}": float(p[j - 1]) for j in range(1, N + 1)}, "<=", violation_budget
        )
    return model


def emit_preparation(scenarios, spec, Q, prep_costs, coupling, y_kind="continuous", y_ub=math.inf):
    """Add preparation variables ``y`` with cost ``prep_costs`` and coupling
    rows instantiated for every leaf solution.

    Each coupling row is a mapping ``{"y": {i: coef}, "x": {i: coef},
    "sense": "<=", "rhs": value}`` with 0-based indices.
    """
    pi = len(prep_costs)
    model = emit_main(scenarios, spec, Q)
    model.name = f"tree_prep_Q{Q}"
    K, n = 2**Q, spec.n_vars
    for i in range(1, pi + 1):
        model.add_var(f"y_{i}", y_kind, 0.0, 1.0 if y_kind == "binary" else y_ub)
    for i, c in enumerate(prep_costs, 1):
        if c != 0:
            model.objective[f"y_{i}"] = float(c)
    for r, row in enumerate(coupling, 1):
        try:
            ys, xs, sense, rhs = row.get("y", {}), row.get("x", {}), row["sense"], row["rhs"]
        except (AttributeError, KeyError) as exc:
            raise SchemaError(f"malformed coupling row {r}: {exc}") from None
        for i in ys:
            if not 0 <= int(i) < pi:
                raise SchemaError(f"coupling row {r} references y index {i}")
        for i in xs:
            if not 0 <= int(i) < n:
                raise SchemaError(f"coupling row {r} references x index {i}")
        for k in range(1, K + 1):
            coeffs = {f"y_{int(i) + 1}": float(c) for i, c in ys.items()}
            for i, c in xs.items():
                coeffs[f"x_{k}_{int(i) + 1}"] = coeffs.get(f"x_{k}_{int(i) + 1}", 0.0) + float(c)
            model.add_constraint(f"prep_{r}_{k}", coeffs, sense, float(rhs))
    return model


def encode_tree(tree, scenarios, variant="main", extra=None, model=None):
    """Variable values that place a built tree into the matching model.

    Extension variables that the tree does not determine (``y``) come from
    ``extra``; exemption binaries ``g`` are set to 0.  Passing the emitted
    ``model`` drops values for variables it does not declare (a ``cu`` model
    without a violation budget has no ``g``).
    """
    Q, K, N = tree.depth, tree.n_leaves, scenarios.n_scenarios
    n_dims = len(scenarios.dimensions)
    leaf_of = assign(tree, scenarios).leaf_of
    values = {}
    for k in range(K):
        for j in range(N):
            values[f"a_{k + 1}_{j + 1}"] = float(leaf_of[j] == k)
    if variant == "pernode" and tree.structure is not Structure.PER_NODE:
        raise ContractError("per-node encoding needs a per-node tree")
    if variant != "pernode" and tree.structure is not Structure.LEVEL_UNIFORM:
        raise ContractError(f"{variant} encoding needs a level-uniform tree")
    for q, s in enumerate(tree.splits, 1):
        for i in range(n_dims):
            values[f"d_{q}_{i + 1}"] = float(s.dimension == i)
        values[f"b_{q}"] = s.threshold
        if variant == "multivariate":
            for i in range(n_dims):
                values[f"lp_{q}_{i + 1}"] = float(s.dimension == i)
                values[f"lm_{q}_{i + 1}"] = 0.0
                values[f"s_{q}_{i + 1}"] = float(s.dimension == i)
    for k, x in enumerate(tree.leaves, 1):
        for i, v in enumerate(x, 1):
            values[f"x_{k}_{i}"] = float(v)
    C = scenarios.cost_values
    for j in range(N):
        values[f"z_{j + 1}"] = float(linear_cost(C[j][None, :], tree.leaves[leaf_of[j]])[0])
    if variant == "cu":
        for j in range(N):
            values[f"g_{j + 1}"] = 0.0
    if extra:
        values.update(extra)
    if model is not None:
        values = {k: v for k, v in values.items() if k in model.variables}
    return values


EMITTERS = {
    "main": emit_main,
    "multivariate": emit_multivariate,
    "pernode": emit_per_node,
    "cu": emit_constraint_uncertainty,
    "prep": emit_preparation,
}
