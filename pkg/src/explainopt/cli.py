"""Command line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 infeasible or over
budget.  Failures print one line to stderr::

    explainopt: error=<Kind> exit=<code> message="<text>"

Input and output paths default to ``$EXPLAINOPT_DATA_DIR`` (or the current
directory) with the file names that ``gen`` and ``build`` write.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import FORMAT_VERSION, __version__
from ._io import atomic_write_text
from .baselines import min_sum_min, nominal_solution, performance
from .builder import BuildOptions, build_log_csv, build_tree
from .errors import (
    BudgetExceededError,
    ContractError,
    DataError,
    ExplainOptError,
    InfeasibleError,
    SchemaError,
)
from .experiments import augment_meta, load_config, load_instance, make_instance, run_benchmark, save_instance
from .lpfile import check_assignment, format_values, parse_values, read_lp, write_lp
from .mip import EMITTERS, encode_tree
from .nominal import linear_cost, per_scenario_optimum
from .scenarios import load_scenarios, save_scenarios
from .tree import FORMAT_VERSION as TREE_FORMAT_VERSION
from .tree import allocated_costs, assign, evaluate, load_tree, render_rule, save_tree

DATA_DIR_ENV = "EXPLAINOPT_DATA_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INFEASIBLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def data_dir():
    return os.environ.get(DATA_DIR_ENV) or "."


def _default(path, name):
    return path if path is not None else os.path.join(data_dir(), name)


def _require_file(path, what):
    if not os.path.isfile(path):
        raise DataError(f"{what} not found: {path}")
    return path


def _require_writable(path):
    parent = os.path.dirname(os.path.abspath(path))
    probe = parent
    while not os.path.exists(probe):
        probe = os.path.dirname(probe)
    if not os.access(probe, os.W_OK):
        raise DataError(f"cannot write to {parent}")
    return path


def _load_problem_and_scenarios(args):
    inst_path = _require_file(_default(args.instance, "instance.json"), "instance file")
    scen_path = _require_file(_default(args.scenarios, "scenarios.csv"), "scenario file")
    inst = load_instance(inst_path)
    return inst, load_scenarios(scen_path)


def _fmt(v):
    return f"{v:.10g}" if isinstance(v, float) else str(v)


def cmd_gen(args):
    out_dir = args.out or data_dir()
    inst_path = _require_writable(os.path.join(out_dir, "instance.json"))
    params = {}
    if args.family == "grid":
        params = {"width": args.width, "height": args.height, "num_types": args.types}
    elif args.family == "selection":
        params = {"n": args.n, "p": args.p}
    inst = make_instance(args.family, params, args.seed)
    scen = inst.sample(args.count, [args.seed, 1])
    if args.meta:
        fields = [{"name": m, "generator": m} for m in args.meta]
        scen = augment_meta(scen, fields, seed=args.seed)
    save_instance(inst, inst_path)
    save_scenarios(scen, os.path.join(out_dir, "scenarios.csv"))
    print(f"wrote {inst_path} and {os.path.join(out_dir, 'scenarios.csv')}: "
          f"{scen.n_scenarios} scenarios, {len(scen.dimensions)} dimensions")


def cmd_build(args):
    inst, scen = _load_problem_and_scenarios(args)
    tree_path = _require_writable(_default(args.out, "tree.json"))
    log_path = args.log or os.path.splitext(tree_path)[0] + "_log.csv"
    _require_writable(log_path)
    opts = BuildOptions(
        depth=args.depth,
        structure=args.structure,
        split_dimensions=args.dims,
        keep_probability=args.keep,
        seed=args.seed,
        fallback_policy=args.fallback,
    )
    result = build_tree(scen, inst.spec, opts, method=args.method)
    save_tree(result.tree, tree_path)
    atomic_write_text(log_path, build_log_csv(result))
    print(render_rule(result.tree))
    print(f"value {_fmt(result.value)}")
    print(f"total {_fmt(result.total)}")
    print(f"nominal_solves {result.nominal_solves}")


def cmd_eval(args):
    tree = load_tree(_require_file(_default(args.tree, "tree.json"), "tree file"))
    scen = load_scenarios(_require_file(_default(args.scenarios, "scenarios.csv"), "scenario file"))
    if tree.problem is None:
        raise DataError("tree file does not record its problem")
    spec = tree.problem
    costs = allocated_costs(tree, scen)
    train = scen
    if args.train is not None:
        train = load_scenarios(_require_file(args.train, "training scenario file"))
    nom = nominal_solution(train, spec)
    perf = performance(costs, linear_cost(scen.cost_values, nom.x), per_scenario_optimum(spec, scen))
    print(f"value {_fmt(evaluate(tree, scen))}")
    print(f"sum {_fmt(evaluate(tree, scen, sum_form=True))}")
    print(f"performance {'undefined' if perf is None else _fmt(perf)}")
    if args.verbose:
        for k, group in enumerate(assign(tree, scen).groups(), 1):
            print(f"leaf {k}: scenarios {', '.join(str(j + 1) for j in sorted(group)) or '-'}")


def cmd_baseline(args):
    inst, scen = _load_problem_and_scenarios(args)
    spec = inst.spec
    if args.method == "nominal":
        sol = nominal_solution(scen, spec)
        print(f"solution {{{', '.join(map(str, sorted(sol.items)))}}}")
        print(f"value {_fmt(sol.value)}")
        print(f"sum {_fmt(float(np.sum(linear_cost(scen.cost_values, sol.x))))}")
    elif args.method == "opt":
        vals = per_scenario_optimum(spec, scen)
        for j, v in enumerate(vals, 1):
            print(f"scenario {j}: {_fmt(float(v))}")
        print(f"value {_fmt(float(np.dot(scen.probabilities, vals)))}")
        print(f"sum {_fmt(float(np.sum(vals)))}")
    else:
        res = min_sum_min(scen, spec, args.solutions, method=args.msm_method, seed=args.seed, restarts=args.restarts)
        for k, s in enumerate(res.solutions, 1):
            print(f"solution {k}: {{{', '.join(map(str, sorted(s.items)))}}}")
        print(f"value {_fmt(res.value)}")
        print(f"sum {_fmt(res.total)}")
        print(f"quality {'exact' if args.msm_method == 'exact' else 'heuristic'}")


def _extension(inst, key):
    if key not in inst.extensions:
        raise DataError(f"instance file has no extensions.{key} section")
    return inst.extensions[key]


def cmd_emit(args):
    inst, scen = _load_problem_and_scenarios(args)
    out = _require_writable(_default(args.out, f"model_{args.variant}.lp"))
    if args.values_out:
        _require_writable(args.values_out)
    spec, Q = inst.spec, args.depth
    if args.variant == "multivariate":
        model = EMITTERS[args.variant](scen, spec, Q, args.nonzeros)
    elif args.variant == "cu":
        try:
            systems = [(s["A"], s["b"]) for s in _extension(inst, "constraint_systems")]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed constraint system: {exc}") from None
        budget = args.violation_budget
        if budget is None:
            budget = float(inst.extensions.get("violation_budget", 0.0))
        model = EMITTERS[args.variant](scen, spec, Q, systems, budget)
    elif args.variant == "prep":
        prep = _extension(inst, "preparation")
        if not isinstance(prep, dict):
            raise SchemaError("extensions.preparation must be an object")
        model = EMITTERS[args.variant](
            scen, spec, Q, prep.get("costs", []), prep.get("coupling", []), prep.get("y_kind", "continuous")
        )
    else:
        model = EMITTERS[args.variant](scen, spec, Q)
    write_lp(model, out)
    print(f"wrote {out}: {len(model.variables)} variables, {len(model.constraints)} constraints")
    if args.tree:
        tree = load_tree(_require_file(args.tree, "tree file"))
        values = encode_tree(tree, scen, args.variant, model=model)
        missing = [v for v in model.variables if v not in values]
        if missing:
            raise DataError(f"tree does not determine variables such as {missing[0]}")
        target = args.values_out or os.path.splitext(out)[0] + "_values.txt"
        atomic_write_text(target, format_values(values))
        print(f"wrote {target}")


def cmd_check(args):
    model = read_lp(_require_file(args.model, "model file"))
    with open(_require_file(args.values, "values file"), encoding="utf-8") as fh:
        values = parse_values(fh.read())
    report = check_assignment(model, values)
    print(report.summary())
    if not report.ok:
        raise InfeasibleError(f"{len(report.violations)} violated rows or bounds")


def cmd_bench(args):
    cfg = load_config(_require_file(args.config, "config file"))
    out = _require_writable(_default(args.out, "report.csv"))
    timings = args.timings or os.path.splitext(out)[0] + "_timings.csv"
    _require_writable(timings)
    report = run_benchmark(cfg, jobs=args.jobs)
    report.save(out, timings)
    failed = sum(r["status"] != "ok" for r in report.rows)
    print(f"wrote {out} ({len(report.rows)} rows, {failed} failed) and {timings}")


def cmd_explain(args):
    tree = load_tree(_require_file(_default(args.tree, "tree.json"), "tree file"))
    print(render_rule(tree, args.names))


def build_parser():
    p = _Parser(prog="explainopt", description="Interpretable prepared solutions via decision trees.")
    p.add_argument(
        "--version",
        action="version",
        version=f"explainopt {__version__} (format {FORMAT_VERSION}, tree format {TREE_FORMAT_VERSION})",
    )
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate an instance and its scenarios")
    g.add_argument("--family", choices=("grid", "selection", "example"), default="grid")
    g.add_argument("--width", type=int, default=5)
    g.add_argument("--height", type=int, default=5)
    g.add_argument("--types", type=int, default=5)
    g.add_argument("--n", type=int, default=10)
    g.add_argument("--p", type=int, default=3)
    g.add_argument("--count", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--meta", nargs="*", choices=("day_of_week", "seconds_of_day"))
    g.add_argument("--out", help="output directory")
    g.set_defaults(func=cmd_gen)

    def io_args(sp):
        sp.add_argument("--instance")
        sp.add_argument("--scenarios")

    b = sub.add_parser("build", help="build an explanatory tree")
    io_args(b)
    b.add_argument("--method", choices=("greedy", "exact"), default="greedy")
    b.add_argument("--depth", type=int, default=2)
    b.add_argument("--structure", choices=("uniform", "pernode"), default="uniform")
    b.add_argument("--dims", nargs="+", help="split-eligible dimension names")
    b.add_argument("--keep", type=float, default=1.0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--fallback", choices=("parent", "global-nominal"), default="parent")
    b.add_argument("--out")
    b.add_argument("--log")
    b.set_defaults(func=cmd_build)

    e = sub.add_parser("eval", help="evaluate a tree on a scenario set")
    e.add_argument("--tree")
    e.add_argument("--scenarios")
    e.add_argument("--train", help="scenarios defining the nominal solution (default: the evaluated set)")
    e.add_argument("--verbose", action="store_true")
    e.set_defaults(func=cmd_eval)

    bl = sub.add_parser("baseline", help="nominal, per-scenario optimum, or min-sum-min")
    io_args(bl)
    bl.add_argument("--method", choices=("nominal", "msm", "opt"), default="nominal")
    bl.add_argument("--solutions", type=int, default=4, help="number of candidate solutions")
    bl.add_argument("--msm-method", choices=("exact", "alternating"), default="alternating")
    bl.add_argument("--restarts", type=int, default=10)
    bl.add_argument("--seed", type=int, default=0)
    bl.set_defaults(func=cmd_baseline)

    m = sub.add_parser("emit", help="write a mixed-integer model as LP text")
    io_args(m)
    m.add_argument("--variant", choices=tuple(EMITTERS), default="main")
    m.add_argument("--depth", type=int, default=2)
    m.add_argument("--nonzeros", type=int, default=1, help="max nonzero split coefficients (multivariate)")
    m.add_argument("--violation-budget", type=float)
    m.add_argument("--tree", help="also write the variable values encoding this tree")
    m.add_argument("--values-out")
    m.add_argument("--out")
    m.set_defaults(func=cmd_emit)

    c = sub.add_parser("check", help="check a variable assignment against an LP model")
    c.add_argument("--model", required=True)
    c.add_argument("--values", required=True)
    c.set_defaults(func=cmd_check)

    be = sub.add_parser("bench", help="run a benchmark config")
    be.add_argument("--config", required=True)
    be.add_argument("--out")
    be.add_argument("--timings")
    be.add_argument("--jobs", type=int, default=1)
    be.set_defaults(func=cmd_bench)

    x = sub.add_parser("explain", help="print a tree as rules")
    x.add_argument("--tree")
    x.add_argument("--names", nargs="+", help="dimension names to print")
    x.set_defaults(func=cmd_explain)
    return p


def _fail(kind, code, message):
    message = " ".join(str(message).split()).replace('"', "'")
    print(f'explainopt: error={kind} exit={code} message="{message}"', file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail("UsageError", EXIT_USAGE, exc)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        args.func(args)
    except UsageError as exc:
        return _fail("UsageError", EXIT_USAGE, exc)
    except ContractError as exc:
        return _fail(type(exc).__name__, EXIT_USAGE, exc)
    except (InfeasibleError, BudgetExceededError) as exc:
        return _fail(type(exc).__name__, EXIT_INFEASIBLE, exc)
    except ExplainOptError as exc:
        return _fail(type(exc).__name__, EXIT_DATA, exc)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        return _fail(type(exc).__name__, EXIT_DATA, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
