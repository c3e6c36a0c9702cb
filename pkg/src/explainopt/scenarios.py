"""Scenario data: observed cost vectors plus optional feature (meta data) columns.

CSV layout::

    e1,e2,day,__prob
    #kind,cost,cost,feature,prob
    3.5,2.0,1,0.5
    4.0,1.5,7,0.5

The ``#kind`` row and the ``__prob`` column are optional.  Without ``#kind``
every column is a cost dimension; without ``__prob`` the rows are equally
likely.
"""

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .errors import ContractError, DataError, ParseError, SchemaError, ValidationError

PROB_COLUMN = "__prob"
KIND_MARKER = "#kind"
PROB_TOLERANCE = 1e-9
RNG_ALGORITHM = "numpy.PCG64"


class Kind(str, Enum):
    COST = "cost"
    FEATURE = "feature"


@dataclass(frozen=True)
class Dimension:
    name: str
    kind: Kind = Kind.COST


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """N observed scenarios over n' named dimensions.

    Cost dimensions, in column order, line up with the variables of the
    nominal problem; feature dimensions may be queried by splits but never
    contribute to a cost.  Instances are read-only.
    """

    dimensions: tuple
    values: np.ndarray
    probabilities: np.ndarray = None

    def __post_init__(self):
        dims = tuple(d if isinstance(d, Dimension) else Dimension(*d) for d in self.dimensions)
        dims = tuple(Dimension(d.name, Kind(d.kind)) for d in dims)
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate dimension name(s): {', '.join(dup)}")
        if not any(d.kind is Kind.COST for d in dims):
            raise SchemaError("at least one cost dimension is required")

        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2 or values.shape[1] != len(dims):
            raise SchemaError(
                f"values must be an N x {len(dims)} matrix, got shape {values.shape}"
            )
        if values.shape[0] < 1:
            raise ValidationError("a scenario set needs at least one scenario")
        if not np.all(np.isfinite(values)):
            j, i = np.argwhere(~np.isfinite(values))[0]
            raise ValidationError(f"non-finite value in scenario {j + 1}, dimension {names[i]!r}")

        n = values.shape[0]
        if self.probabilities is None:
            probs = np.full(n, 1.0 / n)
        else:
            probs = np.array(self.probabilities, dtype=float, copy=True)
            if probs.shape != (n,):
                raise SchemaError(f"expected {n} probabilities, got shape {probs.shape}")
            if not np.all(np.isfinite(probs)) or np.any(probs < 0) or np.any(probs > 1):
                raise ValidationError("probabilities must lie in [0, 1]")
            total = math.fsum(probs)
            if abs(total - 1.0) > PROB_TOLERANCE:
                raise ValidationError(f"probabilities sum to {total!r}, expected 1")

        values.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probabilities", probs)

    @property
    def n_scenarios(self):
        return self.values.shape[0]

    def __len__(self):
        return self.n_scenarios

    @property
    def names(self):
        return [d.name for d in self.dimensions]

    @cached_property
    def cost_indices(self):
        idx = np.array([i for i, d in enumerate(self.dimensions) if d.kind is Kind.COST])
        idx.setflags(write=False)
        return idx

    @cached_property
    def feature_indices(self):
        idx = np.array(
            [i for i, d in enumerate(self.dimensions) if d.kind is Kind.FEATURE], dtype=int
        )
        idx.setflags(write=False)
        return idx

    @property
    def n_costs(self):
        return len(self.cost_indices)

    @cached_property
    def cost_values(self):
        """N x n matrix restricted to cost dimensions."""
        c = np.ascontiguousarray(self.values[:, self.cost_indices])
        c.setflags(write=False)
        return c

    @cached_property
    def is_uniform(self):
        return bool(np.all(self.probabilities == self.probabilities[0]))

    @cached_property
    def weights(self):
        """Objective weight of each scenario.

        Ones for equally likely scenarios (so objectives are plain sums, exact
        on integer data), the probabilities otherwise.  Both orderings agree.
        """
        w = np.ones(self.n_scenarios) if self.is_uniform else self.probabilities.copy()
        w.setflags(write=False)
        return w

    def dimension_index(self, name_or_index):
        if isinstance(name_or_index, (int, np.integer)):
            i = int(name_or_index)
            if not 0 <= i < len(self.dimensions):
                raise ContractError(f"dimension index {i} out of range")
            return i
        try:
            return self.names.index(name_or_index)
        except ValueError:
            raise ContractError(f"unknown dimension {name_or_index!r}") from None

    def subset(self, indices, renormalize=True):
        """Rows ``indices`` as a new set; probabilities become uniform unless
        ``renormalize`` is False, in which case they are rescaled to sum to 1."""
        idx = np.asarray(list(indices), dtype=int)
        if idx.size == 0:
            raise ContractError("cannot build an empty scenario set")
        if renormalize:
            probs = None
        else:
            p = self.probabilities[idx]
            probs = p / p.sum()
        return ScenarioSet(self.dimensions, self.values[idx], probs)


def _parse_float(text, row, column):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"malformed number {text!r}", row=row, column=column) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite number {text!r}", row=row, column=column)
    return value


def read_scenarios_csv(text):
    reader = csv.reader(io.StringIO(text))
    rows, line_nos = [], []
    for r in reader:
        if r and any(cell.strip() for cell in r):
            rows.append(r)
            line_nos.append(reader.line_num)
    if not rows:
        raise SchemaError("scenario file is empty")
    header = [h.strip() for h in rows[0]]
    if any(not h for h in header):
        raise SchemaError("empty column name in header")
    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise SchemaError(f"duplicate dimension name(s): {', '.join(dup)}")

    body = rows[1:]
    body_lines = line_nos[1:]
    kinds = {}
    if body and body[0][0].strip().lower() == KIND_MARKER:
        marker = [c.strip().lower() for c in body[0][1:]]
        if len(marker) != len(header):
            raise SchemaError(
                f"{KIND_MARKER} row has {len(marker)} entries for {len(header)} columns",
            )
        for name, kind in zip(header, marker):
            if name == PROB_COLUMN:
                continue
            if kind in ("", "cost"):
                kinds[name] = Kind.COST
            elif kind == "feature":
                kinds[name] = Kind.FEATURE
            else:
                raise SchemaError(f"unknown kind {kind!r} for column {name!r}")
        body = body[1:]
        body_lines = body_lines[1:]

    prob_col = header.index(PROB_COLUMN) if PROB_COLUMN in header else None
    data_cols = [i for i, h in enumerate(header) if i != prob_col]
    dims = [Dimension(header[i], kinds.get(header[i], Kind.COST)) for i in data_cols]

    values, probs = [], []
    for rownum, row in zip(body_lines, body):
        if len(row) != len(header):
            raise ParseError(
                f"expected {len(header)} cells, found {len(row)}", row=rownum
            )
        values.append([_parse_float(row[i], rownum, header[i]) for i in data_cols])
        if prob_col is not None:
            probs.append(_parse_float(row[prob_col], rownum, PROB_COLUMN))
    if not values:
        raise ValidationError("scenario file contains no data rows")
    return ScenarioSet(tuple(dims), np.array(values), probs if prob_col is not None else None)


def load_scenarios(path, format="csv"):
    if format != "csv":
        raise ContractError(f"unsupported scenario format {format!r}")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"scenario file not found: {path}") from None
    return read_scenarios_csv(text)


def format_scenarios_csv(scenarios, include_probabilities=None):
    if include_probabilities is None:
        include_probabilities = not scenarios.is_uniform
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = scenarios.names + ([PROB_COLUMN] if include_probabilities else [])
    writer.writerow(header)
    if len(scenarios.feature_indices):
        kinds = [d.kind.value for d in scenarios.dimensions]
        writer.writerow([KIND_MARKER] + kinds + (["prob"] if include_probabilities else []))
    for j in range(scenarios.n_scenarios):
        row = [repr(float(v)) for v in scenarios.values[j]]
        if include_probabilities:
            row.append(repr(float(scenarios.probabilities[j])))
        writer.writerow(row)
    return buf.getvalue()


def save_scenarios(scenarios, path, include_probabilities=None):
    return atomic_write_text(path, format_scenarios_csv(scenarios, include_probabilities))


def aggregate_costs(scenarios, indices):
    """Probability-weighted cost sum ``sum_j p_j c_j`` over the given rows.

    Feature dimensions are left out, so the result has one entry per cost
    dimension.
    """
    idx = np.asarray(sorted(set(int(i) for i in indices)), dtype=int)
    if idx.size == 0:
        raise ContractError("aggregate_costs needs a nonempty index set")
    if idx[0] < 0 or idx[-1] >= scenarios.n_scenarios:
        raise ContractError("scenario index out of range")
    p = scenarios.probabilities[idx]
    return (p[:, None] * scenarios.cost_values[idx]).sum(axis=0)


def split_train_test(scenarios, train_count, seed, allow_empty_test=False):
    """Shuffle rows with ``seed`` and cut them into a training and a test part.

    Both parts keep their rows in original order and get uniform
    probabilities.  When ``train_count`` equals N the test part would be empty;
    that is only accepted with ``allow_empty_test``, in which case the test
    part is returned as ``None``.
    """
    n = scenarios.n_scenarios
    if not 1 <= train_count <= n:
        raise ContractError(f"train_count must lie in [1, {n}], got {train_count}")
    if train_count == n and not allow_empty_test:
        raise ContractError(f"train_count must be at most {n - 1} when a test set is requested")
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:train_count])
    test_idx = np.sort(perm[train_count:])
    train = scenarios.subset(train_idx)
    test = scenarios.subset(test_idx) if test_idx.size else None
    return train, test
