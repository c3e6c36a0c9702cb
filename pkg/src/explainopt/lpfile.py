"""LP text format: writer, a reader for the writer's own dialect, and a
solver-free assignment checker."""

import math
import re
from dataclasses import dataclass, field

from ._io import atomic_write_text
from .errors import ContractError, ParseError
from .mip import MipModel

LINE_WIDTH = 78
CHECK_TOLERANCE = 1e-6


def _num(v):
    v = float(v)
    if v == math.inf:
        return "+inf"
    if v == -math.inf:
        return "-inf"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _terms(coeffs):
    parts = []
    for i, (name, c) in enumerate(coeffs.items()):
        sign = "-" if c < 0 else "+"
        mag = _num(abs(c))
        body = name if mag == "1" else f"{mag} {name}"
        parts.append(f"{sign} {body}" if i else ("- " + body if c < 0 else body))
    return parts or ["0"]


def _wrap(head, parts, tail=""):
    lines, cur = [], head
    for p in parts:
        if len(cur) + 1 + len(p) > LINE_WIDTH and cur.strip():
            lines.append(cur)
            cur = "   " + p
        else:
            cur = f"{cur} {p}" if cur else p
    if tail:
        if len(cur) + 1 + len(tail) > LINE_WIDTH:
            lines.append(cur)
            cur = "   " + tail
        else:
            cur = f"{cur} {tail}"
    lines.append(cur)
    return lines


def format_lp(model):
    out = [f"\\ {model.name}", "Minimize"]
    out += _wrap(" obj:", _terms(model.objective))
    out.append("Subject To")
    for c in model.constraints:
        out += _wrap(f" {c.name}:", _terms(c.coeffs), f"{c.sense} {_num(c.rhs)}")
    out.append("Bounds")
    for v in model.variables.values():
        if v.kind != "continuous":
            continue
        if v.lb == -math.inf and v.ub == math.inf:
            out.append(f" {v.name} free")
        else:
            out.append(f" {_num(v.lb)} <= {v.name} <= {_num(v.ub)}")
    binaries = [v.name for v in model.variables.values() if v.kind == "binary"]
    if binaries:
        out.append("Binaries")
        out += _wrap("", binaries)
    out.append("End")
    return "\n".join(out) + "\n"


def write_lp(model, path):
    atomic_write_text(path, format_lp(model))


_SECTIONS = {
    "minimize": "objective",
    "subject to": "rows",
    "bounds": "bounds",
    "binaries": "binaries",
    "binary": "binaries",
    "end": "end",
}
_TOKEN = re.compile(r"[+-]?\s*(?:\d+(?:\.\d*)?(?:[eE][+-]?\d+)?\s+)?[A-Za-z_][\w.]*")


def _parse_expr(text, lineno):
    coeffs = {}
    text = text.strip()
    if text == "0":
        return coeffs
    pos = 0
    for m in _TOKEN.finditer(text):
        if text[pos : m.start()].strip():
            raise ParseError(f"cannot parse expression near {text[pos:m.start()]!r}", row=lineno)
        tok = m.group(0).replace(" ", "")
        sign = -1.0 if tok.startswith("-") else 1.0
        tok = tok.lstrip("+-")
        num = re.match(r"\d+(?:\.\d*)?(?:[eE][+-]?\d+)?(?=[A-Za-z_])", tok)
        if num:
            coef, name = float(num.group(0)), tok[num.end() :]
        else:
            coef, name = 1.0, tok
        coeffs[name] = coeffs.get(name, 0.0) + sign * coef
        pos = m.end()
    if text[pos:].strip():
        raise ParseError(f"trailing text {text[pos:]!r}", row=lineno)
    return coeffs


def _parse_num(tok, lineno):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"expected a number, got {tok!r}", row=lineno) from None


def parse_lp(text):
    """Read LP text in the dialect produced by :func:`format_lp`."""
    model = MipModel()
    section = None
    stmts = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("\\", 1)[0].rstrip()
        if not line.strip():
            if raw.startswith("\\ ") and section is None:
                model.name = raw[2:].strip()
            continue
        key = line.strip().lower()
        if key in _SECTIONS:
            section = _SECTIONS[key]
            continue
        if section is None:
            raise ParseError("content before the Minimize section", row=lineno)
        if line.startswith("   ") and stmts and stmts[-1][0] == section:
            stmts[-1][2].append(line.strip())
        else:
            stmts.append((section, lineno, [line.strip()]))
    objective, rows, bounds, binaries = None, [], {}, []
    for section, lineno, parts in stmts:
        body = " ".join(parts)
        if section == "objective":
            label, _, expr = body.partition(":")
            objective = _parse_expr(expr, lineno)
        elif section == "rows":
            label, sep, expr = body.partition(":")
            if not sep:
                raise ParseError("constraint without a name", row=lineno)
            m = re.match(r"(.*?)(<=|>=|=)\s*(\S+)$", expr)
            if not m:
                raise ParseError(f"constraint {label.strip()!r} has no sense", row=lineno)
            rows.append((label.strip(), _parse_expr(m.group(1), lineno), m.group(2), _parse_num(m.group(3), lineno)))
        elif section == "bounds":
            toks = body.split()
            if len(toks) == 2 and toks[1] == "free":
                bounds[toks[0]] = (-math.inf, math.inf)
            elif len(toks) == 5 and toks[1] == toks[3] == "<=":
                bounds[toks[2]] = (_parse_num(toks[0], lineno), _parse_num(toks[4], lineno))
            else:
                raise ParseError(f"unsupported bound {body!r}", row=lineno)
        elif section == "binaries":
            binaries += body.split()
        elif section == "end":
            raise ParseError("content after End", row=lineno)
    if objective is None:
        raise ParseError("missing objective")
    # the file does not keep declaration order; restore the emitter's block order
    declared = {}
    for name, (lb, ub) in bounds.items():
        declared[name] = ("continuous", lb, ub)
    for name in binaries:
        declared[name] = ("binary", 0.0, 1.0)
    for name in _declaration_order(declared, objective, rows):
        kind, lb, ub = declared.get(name, ("continuous", 0.0, math.inf))
        model.add_var(name, kind, lb, ub)
    model.objective = objective
    for name, coeffs, sense, rhs in rows:
        model.add_constraint(name, coeffs, sense, rhs)
    return model


def _declaration_order(declared, objective, rows):
    seen = dict.fromkeys(declared)
    for name in objective:
        seen.setdefault(name)
    for _, coeffs, _, _ in rows:
        for name in coeffs:
            seen.setdefault(name)
    return sorted(seen, key=_name_key)


_BLOCK_ORDER = {b: i for i, b in enumerate(("a", "d", "b", "x", "z", "lp", "lm", "s", "g", "y"))}


def _name_key(name):
    block, _, rest = name.partition("_")
    idx = tuple(int(t) if t.isdigit() else math.inf for t in rest.split("_")) if rest else ()
    return (_BLOCK_ORDER.get(block, len(_BLOCK_ORDER)), block, idx, name)


def read_lp(path):
    with open(path, encoding="utf-8") as fh:
        return parse_lp(fh.read())


@dataclass
class Violation:
    name: str
    kind: str
    amount: float


@dataclass
class CheckReport:
    objective: float
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def summary(self):
        lines = [f"objective {_num(self.objective)}", f"violations {len(self.violations)}"]
        lines += [f"  {v.kind} {v.name} by {v.amount:.6g}" for v in self.violations]
        return "\n".join(lines)


def check_assignment(model, values, tol=CHECK_TOLERANCE):
    """Evaluate every bound, integrality requirement and constraint."""
    unknown = sorted(set(values) - set(model.variables))
    if unknown:
        raise ContractError(f"unknown variable names: {', '.join(unknown[:5])}")
    missing = [v for v in model.variables if v not in values]
    if missing:
        raise ContractError(f"no value for variables: {', '.join(missing[:5])}")
    report = CheckReport(objective=math.fsum(c * values[v] for v, c in model.objective.items()))
    for v in model.variables.values():
        val = float(values[v.name])
        if not math.isfinite(val):
            report.violations.append(Violation(v.name, "nonfinite", math.inf))
            continue
        if val < v.lb - tol:
            report.violations.append(Violation(v.name, "lower-bound", v.lb - val))
        if val > v.ub + tol:
            report.violations.append(Violation(v.name, "upper-bound", val - v.ub))
        if v.kind == "binary" and abs(val - round(val)) > tol:
            report.violations.append(Violation(v.name, "integrality", abs(val - round(val))))
    for c in model.constraints:
        lhs = math.fsum(coef * values[v] for v, coef in c.coeffs.items())
        if c.sense == "<=":
            excess = lhs - c.rhs
        elif c.sense == ">=":
            excess = c.rhs - lhs
        else:
            excess = abs(lhs - c.rhs)
        if excess > tol:
            report.violations.append(Violation(c.name, "constraint", excess))
    return report


def parse_values(text):
    """Plain ``name value`` pairs, one per line; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 2:
            raise ParseError("expected 'name value'", row=lineno)
        if toks[0] in values:
            raise ParseError(f"duplicate value for {toks[0]!r}", row=lineno)
        values[toks[0]] = _parse_num(toks[1], lineno)
    return values


def format_values(values):
    return "".join(f"{k} {_num(v)}\n" for k, v in values.items())
