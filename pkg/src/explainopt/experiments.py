"""Instance generators and the train/test benchmark harness.

Every run is reproducible from the config: run ``r`` of a config with base
seed ``s`` draws its instance from seed ``s ^ r`` and its training and test
scenarios from the streams ``(s ^ r, 1)`` and ``(s ^ r, 2)``, so the order
in which runs execute never changes a number.

The report body is deterministic; wall-clock runtimes go to a separate
timings file and the generation time to a leading ``#`` comment.
"""

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from ._io import atomic_write_text
from .baselines import min_sum_min, nominal_solution, performance
from .builder import BuildOptions, build_tree
from .datasets import portfolio_example
from .errors import ContractError, ExplainOptError, SchemaError, ValidationError
from .nominal import GridShortestPath, Selection, linear_cost, per_scenario_optimum, problem_from_dict
from .scenarios import RNG_ALGORITHM, Dimension, Kind, ScenarioSet
from .tree import allocated_costs

MIDPOINT_RANGE = (10.0, 30.0)
DEVIATION_RANGE = (0.0, 0.25)
SELECTION_COST_RANGE = (1, 10)
SECONDS_PER_DAY = 86400

REPORT_COLUMNS = (
    "family",
    "train_size",
    "rep",
    "instance_seed",
    "method",
    "param",
    "quality",
    "train_performance",
    "test_performance",
    "train_value",
    "test_value",
    "nominal_solves",
    "status",
)
TIMING_COLUMNS = ("train_size", "rep", "method", "param", "runtime_s")


@dataclass(frozen=True, eq=False)
class GridInstance:
    """Grid shortest path with ``T`` cost types, each a midpoint and a
    relative deviation per edge."""

    spec: GridShortestPath
    midpoints: np.ndarray
    deviations: np.ndarray
    seed: int

    @property
    def num_types(self):
        return self.midpoints.shape[0]

    def sample(self, count, seed):
        return sample_scenarios(self, count, seed)

    def to_dict(self):
        return {
            "problem": self.spec.to_dict(),
            "generator": {
                "family": "grid",
                "params": {
                    "width": self.spec.width,
                    "height": self.spec.height,
                    "num_types": self.num_types,
                },
                "seed": self.seed,
                "rng": RNG_ALGORITHM,
            },
        }


@dataclass(frozen=True, eq=False)
class SelectionInstance:
    """Pick ``p`` of ``n`` items; costs are integers drawn uniformly."""

    spec: Selection
    seed: int
    low: int = SELECTION_COST_RANGE[0]
    high: int = SELECTION_COST_RANGE[1]

    def sample(self, count, seed):
        if count < 1:
            raise ContractError("scenario count must be at least 1")
        rng = np.random.default_rng(seed)
        values = rng.integers(self.low, self.high + 1, size=(count, self.spec.n)).astype(float)
        return ScenarioSet(_cost_dims("c", self.spec.n), values)

    def to_dict(self):
        return {
            "problem": self.spec.to_dict(),
            "generator": {
                "family": "selection",
                "params": {"n": self.spec.n, "p": self.spec.p, "low": self.low, "high": self.high},
                "seed": self.seed,
                "rng": RNG_ALGORITHM,
            },
        }


@dataclass(frozen=True, eq=False)
class FixtureInstance:
    """The bundled 10-scenario portfolio example; sampling returns it as is."""

    spec: Selection
    scenarios: ScenarioSet
    seed: int = 0

    def sample(self, count, seed):
        return self.scenarios

    def to_dict(self):
        return {
            "problem": self.spec.to_dict(),
            "generator": {"family": "example", "params": {}, "seed": self.seed, "rng": RNG_ALGORITHM},
        }


def _cost_dims(prefix, n):
    return [Dimension(f"{prefix}{i}", Kind.COST) for i in range(1, n + 1)]


def gen_grid_instance(width, height, num_types, seed):
    if num_types < 1:
        raise ContractError("num_types must be at least 1")
    spec = GridShortestPath(int(width), int(height))
    rng = np.random.default_rng(seed)
    E = spec.n_vars
    mu = rng.uniform(*MIDPOINT_RANGE, size=(num_types, E))
    delta = rng.uniform(*DEVIATION_RANGE, size=(num_types, E))
    return GridInstance(spec, mu, delta, seed)


def sample_scenarios(inst, count, seed):
    """Each scenario picks a type uniformly, then every edge cost uniformly
    within ``[(1 - delta) mu, (1 + delta) mu]`` of that type."""
    if count < 1:
        raise ContractError("scenario count must be at least 1")
    rng = np.random.default_rng(seed)
    types = rng.integers(inst.num_types, size=count)
    u = rng.uniform(size=(count, inst.spec.n_vars))
    mu, delta = inst.midpoints[types], inst.deviations[types]
    lo, hi = (1 - delta) * mu, (1 + delta) * mu
    values = lo + u * (hi - lo)
    return ScenarioSet(_cost_dims("e", inst.spec.n_vars), values)


def gen_selection_instance(n, p, seed, low=SELECTION_COST_RANGE[0], high=SELECTION_COST_RANGE[1]):
    if low > high:
        raise ContractError("cost range is empty")
    return SelectionInstance(Selection(int(n), int(p)), seed, int(low), int(high))


def make_instance(family, params, seed):
    params = dict(params or {})
    try:
        if family == "grid":
            return gen_grid_instance(params["width"], params["height"], params.get("num_types", 5), seed)
        if family == "selection":
            return gen_selection_instance(
                params["n"],
                params["p"],
                seed,
                params.get("low", SELECTION_COST_RANGE[0]),
                params.get("high", SELECTION_COST_RANGE[1]),
            )
    except KeyError as exc:
        raise SchemaError(f"{family} instance is missing parameter {exc.args[0]!r}") from None
    if family == "example":
        scenarios, spec = portfolio_example()
        return FixtureInstance(spec, scenarios, seed)
    raise SchemaError(f"unknown instance family {family!r}")


def instance_to_json(inst, extensions=None):
    data = inst.to_dict()
    if extensions:
        data["extensions"] = extensions
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def save_instance(inst, path, extensions=None):
    atomic_write_text(path, instance_to_json(inst, extensions))


@dataclass
class InstanceFile:
    """Parsed ``instance.json``: the problem, its generator, extensions."""

    spec: object
    generator: dict
    extensions: dict = field(default_factory=dict)

    def instance(self):
        g = self.generator
        if not g:
            raise SchemaError("instance file has no generator section")
        return make_instance(g.get("family"), g.get("params"), g.get("seed", 0))


def load_instance(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"instance file is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    if not isinstance(data, dict) or "problem" not in data:
        raise SchemaError("instance file needs a 'problem' object")
    ext = data.get("extensions") or {}
    if not isinstance(ext, dict):
        raise SchemaError("'extensions' must be an object")
    return InstanceFile(problem_from_dict(data["problem"]), data.get("generator") or {}, ext)


def _meta_column(spec, n, seed, index, timestamps):
    gen = spec.get("generator")
    if gen == "explicit":
        col = np.asarray(spec.get("values", []), dtype=float)
        if col.shape != (n,):
            raise ValidationError(
                f"explicit column {spec.get('name')!r} has {col.size} values, expected {n}"
            )
        return col
    if gen not in ("day_of_week", "seconds_of_day"):
        raise SchemaError(f"unknown meta generator {gen!r}")
    if timestamps is not None:
        ts = [datetime.fromtimestamp(t, timezone.utc) if not isinstance(t, datetime) else t for t in timestamps]
        if len(ts) != n:
            raise ValidationError(f"got {len(ts)} timestamps for {n} scenarios")
        if gen == "day_of_week":
            return np.array([t.isoweekday() for t in ts], dtype=float)
        return np.array([t.hour * 3600 + t.minute * 60 + t.second for t in ts], dtype=float)
    rng = np.random.default_rng([seed, index])
    if gen == "day_of_week":
        return rng.integers(1, 8, size=n).astype(float)
    return rng.integers(0, SECONDS_PER_DAY, size=n).astype(float)


def augment_meta(scenarios, fields, seed=0, timestamps=None):
    """Append feature dimensions: weekday (1 = Monday .. 7), seconds since
    midnight (0 .. 86399), or an explicit column.

    Weekday and time come from ``timestamps`` (datetimes or epoch seconds)
    when given and are drawn from seeded streams otherwise.
    """
    n = scenarios.n_scenarios
    dims = list(scenarios.dimensions)
    cols = [scenarios.values]
    for index, spec in enumerate(fields):
        name = spec.get("name")
        if not name:
            raise SchemaError("meta field needs a name")
        dims.append(Dimension(name, Kind.FEATURE))
        cols.append(_meta_column(spec, n, seed, index, timestamps)[:, None])
    return ScenarioSet(dims, np.hstack(cols), scenarios.probabilities)


DEFAULT_METHODS = (
    {"name": "greedy", "depth": 1},
    {"name": "greedy", "depth": 2},
    {"name": "nominal"},
    {"name": "opt"},
)


@dataclass(frozen=True)
class BenchConfig:
    family: str = "grid"
    params: dict = field(default_factory=lambda: {"width": 5, "height": 5, "num_types": 5})
    train_sizes: tuple = (5, 10, 20)
    test_size: int = 1000
    repetitions: int = 20
    seed: int = 0
    methods: tuple = DEFAULT_METHODS
    fallback_policy: str = "parent"

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise SchemaError(f"unknown config keys: {', '.join(sorted(extra))}")
        cfg = cls(**{**data, "train_sizes": tuple(data.get("train_sizes", cls.train_sizes)),
                     "methods": tuple(data.get("methods", DEFAULT_METHODS))})
        cfg.validate()
        return cfg

    def validate(self):
        if not self.train_sizes or min(self.train_sizes) < 1:
            raise SchemaError("train_sizes must be positive")
        if self.test_size < 0 or self.repetitions < 1:
            raise SchemaError("test_size must be >= 0 and repetitions >= 1")
        for m in self.methods:
            if m.get("name") not in METHOD_NAMES:
                raise SchemaError(f"unknown method {m.get('name')!r}")

    def runs(self):
        """``(run_index, train_size, rep)`` in report order."""
        out = []
        for size in self.train_sizes:
            for rep in range(self.repetitions):
                out.append((len(out), size, rep))
        return out


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"config is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise SchemaError("config must be a JSON object")
    return BenchConfig.from_dict(data)


@dataclass
class Report:
    rows: list
    timings: list
    generated: str = ""

    def body_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: _cell(row.get(k)) for k in REPORT_COLUMNS})
        return buf.getvalue()

    def to_csv(self):
        return f"# explainopt {__version__} generated {self.generated}\n" + self.body_csv()

    def timings_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, TIMING_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.timings:
            w.writerow({k: _cell(row.get(k)) for k in TIMING_COLUMNS})
        return buf.getvalue()

    def save(self, path, timings_path=None):
        atomic_write_text(path, self.to_csv())
        if timings_path is not None:
            atomic_write_text(timings_path, self.timings_csv())


def _cell(v):
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_report_body(text):
    """The data rows of a report, skipping ``#`` comments."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _tree_method(m, train, spec, seed, fallback):
    opts = BuildOptions(
        depth=int(m.get("depth", 2)),
        structure=m.get("structure", "uniform"),
        split_dimensions=m.get("dims"),
        keep_probability=float(m.get("keep", 1.0)),
        seed=int(m.get("seed", seed)),
        fallback_policy=fallback,
    )
    result = build_tree(train, spec, opts, method=m["name"])
    tree = result.tree
    return (
        lambda s: allocated_costs(tree, s),
        result.nominal_solves,
        "exact" if m["name"] == "exact" else "heuristic",
    )


def _msm_method(m, train, spec, seed):
    kind = m.get("method", "alternating")
    res = min_sum_min(train, spec, int(m.get("solutions", 4)), method=kind, seed=int(m.get("seed", seed)),
                      restarts=int(m.get("restarts", 10)))
    xs = np.stack([s.x for s in res.solutions])

    def costs(s):
        return np.min(np.stack([linear_cost(s.cost_values, x) for x in xs]), axis=0)

    return costs, None, "exact" if kind == "exact" else "heuristic"


METHOD_NAMES = ("greedy", "exact", "nominal", "opt", "msm")


def _param(m):
    if m["name"] in ("greedy", "exact"):
        return f"depth={int(m.get('depth', 2))}" + ("/pernode" if m.get("structure") == "pernode" else "")
    if m["name"] == "msm":
        return f"solutions={int(m.get('solutions', 4))}"
    return ""


def _mean(p, v):
    return math.fsum(p * v)


def run_single(config, run_index, train_size, rep):
    """Evaluate every configured method on one instance; returns
    ``(rows, timings)``.  A failing method yields a row with its error status
    and does not affect the others."""
    inst_seed = config.seed ^ run_index
    inst = make_instance(config.family, config.params, inst_seed)
    train = inst.sample(train_size, [inst_seed, 1])
    test = inst.sample(config.test_size, [inst_seed, 2]) if config.test_size > 0 else None
    spec = inst.spec
    nom = nominal_solution(train, spec)
    sets = {"train": train}
    if test is not None:
        sets["test"] = test
    ref = {
        k: (linear_cost(s.cost_values, nom.x), per_scenario_optimum(spec, s)) for k, s in sets.items()
    }
    rows, timings = [], []
    for m in config.methods:
        row = {
            "family": config.family,
            "train_size": train_size,
            "rep": rep,
            "instance_seed": inst_seed,
            "method": m["name"],
            "param": _param(m),
            "quality": "exact",
            "nominal_solves": "",
            "status": "ok",
        }
        for k in ("train", "test"):
            row[f"{k}_performance"] = ""
            row[f"{k}_value"] = ""
        t0 = time.perf_counter()
        try:
            if m["name"] in ("greedy", "exact"):
                costs, solves, quality = _tree_method(m, train, spec, inst_seed, config.fallback_policy)
            elif m["name"] == "msm":
                costs, solves, quality = _msm_method(m, train, spec, inst_seed)
            elif m["name"] == "nominal":
                costs, solves, quality = (lambda s: linear_cost(s.cost_values, nom.x)), 1, "exact"
            else:
                costs, solves, quality = (lambda s: per_scenario_optimum(spec, s)), None, "exact"
            row["quality"] = quality
            row["nominal_solves"] = "" if solves is None else solves
            for k, s in sets.items():
                f = costs(s)
                f_nom, f_opt = ref[k]
                row[f"{k}_performance"] = performance(f, f_nom, f_opt)
                row[f"{k}_value"] = _mean(s.probabilities, f)
        except ExplainOptError as exc:
            row["status"] = f"error:{type(exc).__name__}"
        except Exception as exc:  # noqa: BLE001 - isolate one run from the batch
            row["status"] = f"crash:{type(exc).__name__}"
        timings.append(
            {
                "train_size": train_size,
                "rep": rep,
                "method": m["name"],
                "param": row["param"],
                "runtime_s": round(time.perf_counter() - t0, 6),
            }
        )
        rows.append(row)
    return rows, timings


def _run_star(args):
    return run_single(*args)


def run_benchmark(config, jobs=1):
    if isinstance(config, dict):
        config = BenchConfig.from_dict(config)
    runs = config.runs()
    args = [(config, r, n, rep) for r, n, rep in runs]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_star, args))
    else:
        results = [_run_star(a) for a in args]
    rows, timings = [], []
    for r, t in results:
        rows += r
        timings += t
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return Report(rows, timings, stamp)


def summarize(report):
    """Mean train/test performance per (method, param, train_size)."""
    groups = {}
    for row in report.rows:
        key = (row["method"], row["param"], row["train_size"])
        groups.setdefault(key, []).append(row)
    out = []
    for (method, param, size), rows in groups.items():
        entry = {"method": method, "param": param, "train_size": size, "runs": len(rows)}
        for k in ("train_performance", "test_performance"):
            vals = [r[k] for r in rows if isinstance(r[k], float)]
            entry[k] = math.fsum(vals) / len(vals) if vals else None
        out.append(entry)
    return out
