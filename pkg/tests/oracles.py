"""Brute-force reference implementations used to freeze expected values.

Nothing here shares code with the package's solvers or builders beyond the
data containers.
"""

import itertools

import numpy as np


def selection_solutions(n, p):
    for items in itertools.combinations(range(n), p):
        x = np.zeros(n, dtype=int)
        x[list(items)] = 1
        yield x


def grid_paths(width, height):
    """Every monotone path as a 0/1 arc vector, using the documented arc order."""
    n_h = height * (width - 1)

    def h_arc(r, c):
        return r * (width - 1) + c

    def v_arc(r, c):
        return n_h + r * width + c

    out = []

    def walk(r, c, arcs):
        if (r, c) == (height - 1, width - 1):
            x = np.zeros(n_h + width * (height - 1), dtype=int)
            x[arcs] = 1
            out.append(x)
            return
        if c + 1 < width:
            walk(r, c + 1, arcs + [h_arc(r, c)])
        if r + 1 < height:
            walk(r + 1, c, arcs + [v_arc(r, c)])

    walk(0, 0, [])
    return out


def dag_paths(n_nodes, arcs, source, sink):
    out_arcs = [[] for _ in range(n_nodes)]
    for a, (t, _) in enumerate(arcs):
        out_arcs[t].append(a)
    paths = []

    def walk(v, used):
        if v == sink:
            x = np.zeros(len(arcs), dtype=int)
            x[used] = 1
            paths.append(x)
            return
        for a in out_arcs[v]:
            walk(arcs[a][1], used + [a])

    walk(source, [])
    return paths


def all_solutions(spec):
    kind = spec.to_dict()["type"]
    if kind == "selection":
        return list(selection_solutions(spec.n, spec.p))
    if kind == "grid":
        return grid_paths(spec.width, spec.height)
    return dag_paths(spec.n_nodes, list(spec.arcs), spec.source, spec.sink)


def enum_min(solutions, c):
    """Minimum of ``c @ x`` over explicit solutions, plus all minimizers."""
    vals = [float(np.dot(c, x)) for x in solutions]
    best = min(vals)
    return best, [x for x, v in zip(solutions, vals) if v == best]


def fit_cell(solutions, C, rows):
    """Enumerated optimum of the summed costs of ``rows``."""
    agg = C[rows].sum(axis=0)
    _, xs = enum_min(solutions, agg)
    x = xs[0]
    return x, float(sum(float(np.dot(C[j], x)) for j in rows))


def partition_value(solutions, C, labels):
    total = 0.0
    for lab in set(labels):
        rows = [j for j, l in enumerate(labels) if l == lab]
        total += fit_cell(solutions, C, rows)[1]
    return total


def midpoints(column):
    v = sorted(set(float(a) for a in column))
    return [(a + b) / 2 for a, b in zip(v, v[1:])]


def brute_uniform_tree(values, C, solutions, Q):
    """Best sum-form Laplace over all level-uniform trees with midpoint
    thresholds, with every leaf fitted by enumeration."""
    choices = [(i, t) for i in range(values.shape[1]) for t in midpoints(values[:, i])]
    if not choices:
        return partition_value(solutions, C, [0] * len(C))
    best = np.inf
    for splits in itertools.product(choices, repeat=Q):
        labels = [0] * len(C)
        for i, t in splits:
            labels = [2 * l + int(values[j, i] > t) for j, l in enumerate(labels)]
        best = min(best, partition_value(solutions, C, labels))
    return best


def brute_min_sum_min(C, solutions, K):
    """Best-of-K over all K-subsets of explicit solutions."""
    costs = np.array([[float(np.dot(c, x)) for x in solutions] for c in C])
    best = np.inf
    for combo in itertools.combinations(range(len(solutions)), min(K, len(solutions))):
        best = min(best, costs[:, combo].min(axis=1).sum())
    return best
