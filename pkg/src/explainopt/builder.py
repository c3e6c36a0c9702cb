"""Tree construction under the Laplace criterion.

With the expected-cost criterion the leaves decouple: once the splits are
fixed, each leaf's solution is the nominal optimum for the summed costs of the
scenarios routed to it.  Both builders therefore only search over splits and
delegate the leaves to the nominal solver.

Scenario subsets ("cells") are handled as Python int bitmasks; bit ``j`` is
scenario ``j``.  :class:`CellEvaluator` memoizes one nominal solve per distinct
cell and counts the solves it actually performs.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceededError, ContractError
from .nominal import Solution, linear_cost
from .tree import Assignment, Criterion, DecisionTree, Origin, Split, Structure, route_splits

FALLBACK_POLICIES = ("parent", "global-nominal")
DEFAULT_EXACT_BUDGET = 10**8


def bool_to_mask(flags):
    flags = np.asarray(flags, dtype=bool)
    return int.from_bytes(np.packbits(flags, bitorder="little").tobytes(), "little")


def mask_to_indices(mask, n):
    raw = mask.to_bytes((n + 7) // 8, "little")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:n]
    return np.flatnonzero(bits)


class CellEvaluator:
    """Fits and caches the optimal solution of scenario cells.

    For a cell ``S`` the fitted solution minimizes ``sum_{j in S} w_j c_j^T x``
    where ``w`` are the set's objective weights.  The per-scenario terms
    ``w_j c_j^T x`` are kept so that any partition's objective is an exactly
    rounded sum that does not depend on the order cells are visited in.
    """

    def __init__(self, scenarios, spec):
        if scenarios.n_costs != spec.n_vars:
            raise ContractError(
                f"scenario set has {scenarios.n_costs} cost dimensions, "
                f"problem has {spec.n_vars} variables"
            )
        self.scenarios = scenarios
        self.spec = spec
        self.n = scenarios.n_scenarios
        self.full = (1 << self.n) - 1
        self._C = scenarios.cost_values
        self._w = scenarios.weights
        self._memo = {}
        self.solves = 0
        self.requests = 0

    def indices(self, mask):
        return mask_to_indices(mask, self.n)

    def ensure(self, masks):
        """Fit every nonempty cell in ``masks`` that is not cached yet."""
        missing = {}
        for m in masks:
            if m:
                self.requests += 1
                if m not in self._memo:
                    missing[m] = None
        missing = list(missing)
        if not missing:
            return
        idx = [self.indices(m) for m in missing]
        agg = np.stack([(self._w[i, None] * self._C[i]).sum(axis=0) for i in idx])
        X, _ = self.spec.solve_batch(agg)
        self.solves += len(missing)
        for m, i, x in zip(missing, idx, X):
            x.setflags(write=False)
            terms = self._w[i] * linear_cost(self._C[i], x)
            self._memo[m] = (x, terms)

    def solution(self, mask):
        self.ensure([mask])
        x, terms = self._memo[mask]
        return Solution(x, math.fsum(terms))

    def objective(self, masks):
        parts = [self._memo[m][1] for m in masks if m]
        return math.fsum(np.concatenate(parts)) if parts else 0.0


@dataclass(frozen=True)
class SplitCandidate:
    dimension: int
    threshold: float
    lower: float
    upper: float


def _midpoints(column):
    v = np.unique(column)
    if v.size < 2:
        return v[:0], v[:0], v[:0]
    lo, hi = v[:-1], v[1:]
    mid = (lo + hi) / 2
    # adjacent floats: keep the bipartition (lo stays, hi crosses)
    bad = (mid <= lo) | (mid >= hi)
    mid[bad] = lo[bad]
    return mid, lo, hi


def split_candidates(scenarios, dim, rows=None):
    """Midpoints between consecutive distinct values of one dimension."""
    i = scenarios.dimension_index(dim)
    col = scenarios.values[:, i] if rows is None else scenarios.values[rows, i]
    mid, lo, hi = _midpoints(col)
    return [SplitCandidate(i, float(t), float(a), float(b)) for t, a, b in zip(mid, lo, hi)]


@dataclass(frozen=True)
class BuildOptions:
    depth: int = 2
    structure: Structure = Structure.LEVEL_UNIFORM
    criterion: Criterion = Criterion.LAPLACE
    split_dimensions: tuple = None
    keep_probability: float = 1.0
    seed: int = 0
    fallback_policy: str = "parent"
    budget: int = DEFAULT_EXACT_BUDGET

    def __post_init__(self):
        object.__setattr__(self, "structure", Structure(self.structure))
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        if self.split_dimensions is not None:
            object.__setattr__(self, "split_dimensions", tuple(self.split_dimensions))
        if int(self.depth) < 1:
            raise ContractError("tree depth must be at least 1")
        if not 0 < self.keep_probability <= 1:
            raise ContractError("keep_probability must lie in (0, 1]")
        if self.fallback_policy not in FALLBACK_POLICIES:
            raise ContractError(f"unknown fallback policy {self.fallback_policy!r}")
        if self.criterion is not Criterion.LAPLACE:
            raise ContractError("trees can only be built under the Laplace criterion")


@dataclass
class LevelRecord:
    level: int
    candidates_evaluated: int
    best_value: float


@dataclass
class FitResult:
    solutions: list
    origins: list
    value: float
    total: float


@dataclass
class BuildResult:
    """A built tree plus bookkeeping.

    ``value`` is the expected training cost.  ``total`` is the objective the
    builder minimized: the plain cost sum for equally likely scenarios, the
    expectation otherwise.
    """

    tree: DecisionTree
    value: float
    total: float
    nominal_solves: int
    subproblems: int
    log: list = field(default_factory=list)


def _eligible_dims(scenarios, opts):
    if opts.split_dimensions is None:
        return list(range(len(scenarios.dimensions)))
    dims = sorted({scenarios.dimension_index(d) for d in opts.split_dimensions})
    if not dims:
        raise ContractError("split dimension whitelist is empty")
    return dims


def _sentinel(scenarios, dims):
    d = dims[0]
    return Split(d, float(scenarios.values[:, d].max()))


def _depth_of(n_leaves):
    Q = n_leaves.bit_length() - 1
    if 2**Q != n_leaves:
        raise ContractError("number of leaves must be a power of two")
    return Q


def fit_leaves(scenarios, spec, assignment, fallback_policy="parent", evaluator=None):
    """Fit each leaf on its cell; fill empty leaves by the fallback policy.

    ``parent`` hands an empty leaf the solution of its deepest ancestor cell
    that holds at least one scenario; ``global-nominal`` uses the solution
    fitted on the whole set.
    """
    if fallback_policy not in FALLBACK_POLICIES:
        raise ContractError(f"unknown fallback policy {fallback_policy!r}")
    ev = evaluator or CellEvaluator(scenarios, spec)
    if not isinstance(assignment, Assignment):
        assignment = Assignment(assignment, 2 ** int(np.max(assignment)).bit_length())
    leaf_of = assignment.leaf_of
    if leaf_of.size != scenarios.n_scenarios:
        raise ContractError("assignment length does not match the scenario set")
    K = assignment.n_leaves
    Q = _depth_of(K)
    masks = [bool_to_mask(leaf_of == k) for k in range(K)]
    ev.ensure(masks)

    solutions, origins = [], []
    for k, m in enumerate(masks):
        if m:
            solutions.append(ev.solution(m))
            origins.append(Origin.FITTED)
            continue
        source = ev.full
        if fallback_policy == "parent":
            for d in range(Q - 1, -1, -1):
                anc = bool_to_mask((leaf_of >> (Q - d)) == (k >> (Q - d)))
                if anc:
                    source = anc
                    break
        solutions.append(ev.solution(source))
        origins.append(Origin.FALLBACK)

    costs = np.empty(scenarios.n_scenarios)
    for k, m in enumerate(masks):
        if m:
            i = ev.indices(m)
            costs[i] = linear_cost(scenarios.cost_values[i], solutions[k].x)
    value = math.fsum(scenarios.probabilities * costs)
    total = ev.objective(masks)
    return FitResult(solutions, origins, value, total)


def _finish(scenarios, spec, splits, structure, Q, opts, ev, log):
    leaf_of = route_splits(splits, structure, Q, scenarios.values)
    fit = fit_leaves(scenarios, spec, Assignment(leaf_of, 2**Q), opts.fallback_policy, ev)
    tree = DecisionTree(
        Q,
        splits,
        [s.x for s in fit.solutions],
        fit.origins,
        structure,
        spec,
        tuple(scenarios.names),
    )
    return BuildResult(tree, fit.value, fit.total, ev.solves, ev.requests, log)


def _level_candidates(scenarios, dims, full):
    """Distinct global bipartitions in (dimension, threshold) order."""
    out, seen = [], set()
    for d in dims:
        col = scenarios.values[:, d]
        mid, _, _ = _midpoints(col)
        for t in mid:
            right = bool_to_mask(col > t)
            key = min(right, full ^ right)
            if key in seen:
                continue
            seen.add(key)
            out.append((d, float(t), right))
    return out


def build_exact(scenarios, spec, opts=None):
    """Enumerate every level-uniform tree over midpoint thresholds.

    Returns the tree with the smallest training objective; ties go to the
    lexicographically smallest sequence of (dimension, threshold) per level.
    """
    opts = opts or BuildOptions()
    if opts.structure is not Structure.LEVEL_UNIFORM:
        raise ContractError("exact building supports level-uniform trees only")
    Q = int(opts.depth)
    dims = _eligible_dims(scenarios, opts)
    N = scenarios.n_scenarios
    required = (len(dims) * N) ** Q
    if required > opts.budget:
        raise BudgetExceededError(
            f"exact enumeration needs up to {required} split combinations, budget is {opts.budget}",
            required=required,
            budget=opts.budget,
        )
    ev = CellEvaluator(scenarios, spec)
    full = ev.full
    cands = _level_candidates(scenarios, dims, full)
    if not cands:
        splits = [_sentinel(scenarios, dims)] * Q
        return _finish(scenarios, spec, splits, Structure.LEVEL_UNIFORM, Q, opts, ev, [])

    rights = [c[2] for c in cands]
    seen = {}
    best = [math.inf, None]
    evaluated = [0]

    def descend(cells, chosen):
        level = len(chosen) + 1
        if level == Q:
            batch = []
            for r in rights:
                batch.extend(c & ~r & full for c in cells)
                batch.extend(c & r for c in cells)
            ev.ensure(batch)
        for ci, r in enumerate(rights):
            new = [c & ~r & full for c in cells] + [c & r for c in cells]
            if level < Q:
                descend(new, chosen + (ci,))
                continue
            key = frozenset(m for m in new if m)
            obj = seen.get(key)
            if obj is None:
                obj = ev.objective(key)
                seen[key] = obj
                evaluated[0] += 1
            if obj < best[0]:
                best[0] = obj
                best[1] = chosen + (ci,)

    descend([full], ())
    splits = [Split(cands[i][0], cands[i][1]) for i in best[1]]
    log = [LevelRecord(Q, evaluated[0], best[0])]
    return _finish(scenarios, spec, splits, Structure.LEVEL_UNIFORM, Q, opts, ev, log)


def _subsample(rng, n, keep):
    if keep >= 1:
        return np.ones(n, dtype=bool)
    return rng.random(n) < keep


def _greedy_uniform(scenarios, spec, opts, ev, dims):
    Q = int(opts.depth)
    full = ev.full
    values = scenarios.values
    leaf_of = np.zeros(scenarios.n_scenarios, dtype=int)
    splits, log = [], []
    for q in range(1, Q + 1):
        rng = np.random.default_rng([opts.seed, q])
        cells = [bool_to_mask(leaf_of == k) for k in range(2 ** (q - 1))]
        best_obj, best_split = math.inf, None
        evaluated = 0
        seen = set()
        for d in dims:
            col = values[:, d]
            mid, _, _ = _midpoints(col)
            keep = _subsample(rng, mid.size, opts.keep_probability)
            batch = []
            for t in mid[keep]:
                right = bool_to_mask(col > t)
                key = min(right, full ^ right)
                if key in seen:
                    continue
                seen.add(key)
                new = [c & ~right & full for c in cells] + [c & right for c in cells]
                batch.append((float(t), new))
            ev.ensure(m for _, new in batch for m in new)
            for t, new in batch:
                evaluated += 1
                obj = ev.objective(new)
                if obj < best_obj:
                    best_obj, best_split = obj, Split(d, t)
        if best_split is None:
            best_split = _sentinel(scenarios, dims)
            ev.ensure(cells)
            best_obj = ev.objective(cells)
        splits.append(best_split)
        leaf_of = 2 * leaf_of + (values[:, best_split.dimension] > best_split.threshold)
        log.append(LevelRecord(q, evaluated, best_obj))
    return splits, log


def _greedy_per_node(scenarios, spec, opts, ev, dims):
    Q = int(opts.depth)
    full = ev.full
    values = scenarios.values
    n_nodes = 2**Q - 1
    cell_of = {0: full}
    splits = [None] * n_nodes
    log = []
    for q in range(1, Q + 1):
        evaluated = 0
        for v in range(2 ** (q - 1) - 1, 2**q - 1):
            cell = cell_of[v]
            rng = np.random.default_rng([opts.seed, q, v])
            best_obj, best_split, best_right = math.inf, None, 0
            if cell:
                rows = ev.indices(cell)
                seen = set()
                for d in dims:
                    col = values[:, d]
                    mid, _, _ = _midpoints(col[rows])
                    keep = _subsample(rng, mid.size, opts.keep_probability)
                    batch = []
                    for t in mid[keep]:
                        right = bool_to_mask(col > t) & cell
                        key = min(right, cell ^ right)
                        if key in seen:
                            continue
                        seen.add(key)
                        batch.append((float(t), right))
                    ev.ensure(m for _, r in batch for m in (cell ^ r, r))
                    for t, right in batch:
                        evaluated += 1
                        obj = ev.objective([cell ^ right, right])
                        if obj < best_obj:
                            best_obj, best_split, best_right = obj, Split(d, t), right
            if best_split is None:
                best_split, best_right = _sentinel(scenarios, dims), 0
            splits[v] = best_split
            cell_of[2 * v + 1] = cell ^ best_right
            cell_of[2 * v + 2] = best_right
        level_cells = [cell_of[v] for v in range(2**q - 1, 2 ** (q + 1) - 1)]
        ev.ensure(level_cells)
        log.append(LevelRecord(q, evaluated, ev.objective(level_cells)))
    return splits, log


def build_greedy(scenarios, spec, opts=None):
    """Choose splits one level at a time, keeping earlier levels fixed.

    Level-uniform trees pick one split per level for the whole tree; per-node
    trees pick each node's split on that node's own scenarios.  Candidates
    may be thinned by ``keep_probability``, drawn from ``seed``.
    """
    opts = opts or BuildOptions()
    dims = _eligible_dims(scenarios, opts)
    ev = CellEvaluator(scenarios, spec)
    if opts.structure is Structure.LEVEL_UNIFORM:
        splits, log = _greedy_uniform(scenarios, spec, opts, ev, dims)
    else:
        splits, log = _greedy_per_node(scenarios, spec, opts, ev, dims)
    return _finish(scenarios, spec, splits, opts.structure, int(opts.depth), opts, ev, log)


def build_tree(scenarios, spec, opts=None, method="greedy"):
    if method == "greedy":
        return build_greedy(scenarios, spec, opts)
    if method == "exact":
        return build_exact(scenarios, spec, opts)
    raise ContractError(f"unknown build method {method!r}")


def build_log_csv(result):
    lines = ["level,candidates_evaluated,best_value"]
    for rec in result.log:
        lines.append(f"{rec.level},{rec.candidates_evaluated},{rec.best_value!r}")
    lines.append(f"# nominal_solves={result.nominal_solves} subproblems={result.subproblems}")
    return "\n".join(lines) + "\n"


def nominal_solve_bound(n_dims, n_scenarios, depth):
    """Upper bound on greedy level-uniform nominal solves: n N (2 + 4 + ... + K) + K."""
    return n_dims * n_scenarios * (2 ** (depth + 1) - 2) + 2**depth

