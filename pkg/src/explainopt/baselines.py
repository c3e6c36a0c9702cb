"""Reference points: nominal solution, per-scenario optimum, min-sum-min, and
the normalized performance score."""

import math
from dataclasses import dataclass, field

import numpy as np

from .builder import CellEvaluator, bool_to_mask
from .errors import BudgetExceededError, ContractError
from .nominal import Solution, linear_cost, per_scenario_optimum, solve_nominal
from .scenarios import aggregate_costs
from .tree import Assignment

DEFAULT_MSM_BUDGET = 10**7


def nominal_solution(scenarios, spec):
    """Single solution minimizing the expected cost over all scenarios."""
    return solve_nominal(spec, aggregate_costs(scenarios, range(scenarios.n_scenarios)))


@dataclass
class MsmSolution:
    solutions: list
    assignment: Assignment
    value: float
    costs: np.ndarray
    method: str
    history: list = field(default_factory=list)

    @property
    def total(self):
        """Plain sum of per-scenario costs."""
        return math.fsum(self.costs)


def _best_of(scenarios, xs):
    """Cheapest solution per scenario; ties go to the lowest index."""
    costs = np.column_stack([linear_cost(scenarios.cost_values, x) for x in xs])
    choice = np.argmin(costs, axis=1)
    return choice, costs[np.arange(len(choice)), choice]


def _msm_result(scenarios, xs, method, history=()):
    choice, best = _best_of(scenarios, xs)
    sols = [Solution(x, math.fsum(best[choice == k])) for k, x in enumerate(xs)]
    value = math.fsum(scenarios.probabilities * best)
    return MsmSolution(sols, Assignment(choice, len(xs)), value, best, method, list(history))


def _restricted_growth(n, k):
    """All partitions of range(n) into at most k blocks, as block labels."""
    labels = [0] * n

    def rec(j, used):
        if j == n:
            yield labels
            return
        for b in range(min(used + 1, k)):
            labels[j] = b
            yield from rec(j + 1, max(used, b + 1))

    yield from rec(0, 0)


def _msm_exact(scenarios, spec, K, budget):
    N = scenarios.n_scenarios
    k_eff = min(K, N)
    required = k_eff**N
    if required > budget:
        raise BudgetExceededError(
            f"exact min-sum-min needs {required} assignments, budget is {budget}",
            required=required,
            budget=budget,
        )
    ev = CellEvaluator(scenarios, spec)
    best_obj, best_cells = math.inf, None
    for labels in _restricted_growth(N, k_eff):
        lab = np.asarray(labels)
        cells = [bool_to_mask(lab == b) for b in range(lab.max() + 1)]
        ev.ensure(cells)
        obj = ev.objective(cells)
        if obj < best_obj:
            best_obj, best_cells = obj, cells
    xs = [ev.solution(m).x for m in best_cells]
    xs += [xs[0]] * (K - len(xs))
    return _msm_result(scenarios, xs, "exact")


def _msm_alternating(scenarios, spec, K, seed, restarts, max_iter):
    N = scenarios.n_scenarios
    C = scenarios.cost_values
    w = scenarios.weights
    ev = CellEvaluator(scenarios, spec)
    X_single, _ = spec.solve_batch(C)
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        start = rng.choice(N, size=min(K, N), replace=False)
        xs = [X_single[j] for j in start]
        xs += [xs[i % len(xs)] for i in range(K - len(xs))]
        choice, cost = _best_of(scenarios, xs)
        history = [math.fsum(w * cost)]
        for _ in range(max_iter):
            refit = list(xs)
            for k in range(K):
                cell = bool_to_mask(choice == k)
                if cell:
                    refit[k] = ev.solution(cell).x
            new_choice, cost = _best_of(scenarios, refit)
            value = math.fsum(w * cost)
            # stop at a fixed point; a step without strict progress could cycle on ties
            if value >= history[-1]:
                break
            xs, choice = refit, new_choice
            history.append(value)
        obj = history[-1]
        if best is None or obj < best[0]:
            best = (obj, list(xs), history)
    return _msm_result(scenarios, best[1], "alternating", best[2])


def min_sum_min(
    scenarios,
    spec,
    K,
    method="alternating",
    seed=0,
    restarts=10,
    budget=DEFAULT_MSM_BUDGET,
    max_iter=1000,
):
    """K solutions with an unrestricted best-of-K assignment.

    ``exact`` enumerates all partitions of the scenarios into at most K cells
    (tiny N only).  ``alternating`` is a k-means style heuristic: assign every
    scenario to its cheapest solution, refit each cell, repeat until the
    assignment stops changing; the best of ``restarts`` seeded starts wins.
    """
    if K < 1:
        raise ContractError("K must be at least 1")
    if method == "exact":
        return _msm_exact(scenarios, spec, K, budget)
    if method == "alternating":
        if restarts < 1:
            raise ContractError("restarts must be at least 1")
        return _msm_alternating(scenarios, spec, K, seed, restarts, max_iter)
    raise ContractError(f"unknown min-sum-min method {method!r}")


def _scale(*arrays):
    return max(1.0, max(float(np.max(np.abs(a))) for a in arrays))


def performance_values(f, f_nom, f_opt, rtol=1e-9):
    """Per-scenario score ``1 - (f - f_opt) / (f_nom - f_opt)``.

    Entries whose denominator vanishes are NaN.
    """
    f, f_nom, f_opt = (np.asarray(a, dtype=float) for a in (f, f_nom, f_opt))
    if not (f.shape == f_nom.shape == f_opt.shape) or f.ndim != 1:
        raise ContractError("performance inputs must be vectors of equal length")
    tol = rtol * _scale(f, f_nom, f_opt)
    if np.any(f_opt > f + tol) or np.any(f_opt > f_nom + tol):
        raise ContractError("per-scenario optimum exceeds a compared value; solver bug?")
    denom = f_nom - f_opt
    defined = denom > tol
    out = np.full(f.shape, np.nan)
    out[defined] = 1.0 - (f[defined] - f_opt[defined]) / denom[defined]
    return out


def performance(f, f_nom, f_opt, rtol=1e-9):
    """Mean score over scenarios where the nominal solution is not optimal.

    Returns ``None`` when no scenario qualifies and ``f`` differs from the
    optimum somewhere (the score is undefined), 1.0 when it matches everywhere.
    """
    vals = performance_values(f, f_nom, f_opt, rtol)
    defined = ~np.isnan(vals)
    if defined.any():
        return math.fsum(vals[defined]) / int(defined.sum())
    f, f_opt = np.asarray(f, dtype=float), np.asarray(f_opt, dtype=float)
    if np.all(np.abs(f - f_opt) <= rtol * _scale(f, f_opt)):
        return 1.0
    return None


__all__ = [
    "MsmSolution",
    "min_sum_min",
    "nominal_solution",
    "per_scenario_optimum",
    "performance",
    "performance_values",
]
