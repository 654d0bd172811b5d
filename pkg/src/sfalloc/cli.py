"""Command-line front end: ``scr aggregate|allocate|compare|calibrate|check``.

Exit codes: 0 success, 1 invalid tree or arguments, 2 computation error or
failed property, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import FIXTURES, load_fixture
from .aggregation import aggregate_tree, calibrate_rho
from .allocation import allocate
from .diagnostics import all_passed, compare_principles, run_property_suite
from .model import PRINCIPLES, PrincipleSpec, RiskTree, TreeError, parse_tree

EXIT_OK, EXIT_INVALID, EXIT_COMPUTE, EXIT_IO = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# input

def read_tree(ref: str) -> RiskTree:
    """Load a tree from a path, or from a bundled fixture name when no such file exists."""
    path = Path(ref)
    if path.is_file():
        try:
            text = path.read_text()
        except OSError as exc:
            raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
        return parse_tree(text)
    name = path.stem if path.suffix == ".json" else ref
    if name in FIXTURES and not path.parent.parts:
        return load_fixture(name)
    raise CliError(f"tree file not found: {ref}", EXIT_IO)


def _read_csv_rows(ref: str) -> list[list[str]]:
    try:
        with open(ref, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise CliError(f"cannot read {ref}: {exc}", EXIT_IO) from exc
    return [[c.strip() for c in r] for r in rows if not r[0].lstrip().startswith("#")]


def _is_header(row: Sequence[str]) -> bool:
    try:
        float(row[-1])
        return False
    except ValueError:
        return True


def read_keyed_values(ref: str, what: str) -> dict[str, float]:
    """Two-column csv ``node_id,value`` (header optional)."""
    rows = _read_csv_rows(ref)
    if rows and _is_header(rows[0]):
        rows = rows[1:]
    out = {}
    for k, row in enumerate(rows, 1):
        if len(row) != 2:
            raise CliError(f"{ref}: row {k} must have 2 columns (node_id,{what})", EXIT_INVALID)
        try:
            out[row[0]] = float(row[1])
        except ValueError as exc:
            raise CliError(f"{ref}: row {k}: {what} {row[1]!r} is not a number", EXIT_INVALID) from exc
    return out


def read_var_triplets(ref: str) -> list[tuple[float, float, float]]:
    rows = _read_csv_rows(ref)
    if rows and _is_header(rows[0]):
        rows = rows[1:]
    out = []
    for k, row in enumerate(rows, 1):
        if len(row) != 3:
            raise CliError(f"{ref}: row {k} must have 3 columns var_x,var_y,var_xy", EXIT_INVALID)
        try:
            out.append(tuple(float(x) for x in row))
        except ValueError as exc:
            raise CliError(f"{ref}: row {k}: non-numeric value", EXIT_INVALID) from exc
    return out


# --------------------------------------------------------------------------
# output

def _fmt(value: Any, kind: str, precision: int) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    if kind == "money":
        return f"{value:,.{precision}f}"
    if kind == "pct":
        return f"{100 * value:.{precision}f}%"
    if kind == "num":
        return f"{value:.{max(precision, 4)}f}"
    return str(value)


def render(columns: Sequence[tuple[str, str]], rows: Sequence[dict[str, Any]], fmt: str, precision: int,
           meta: dict[str, Any] | None = None) -> str:
    """Render rows as an aligned table, csv, or json.

    ``columns`` pairs a key with a display kind (text, money, pct, num). Machine
    formats carry full-precision numbers; only the table rounds.
    """
    keys = [k for k, _ in columns]
    if fmt == "json":
        doc = dict(meta or {})
        doc["rows"] = [{k: _json_value(r.get(k)) for k in keys} for r in rows]
        return json.dumps(doc, indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow(["" if r.get(k) is None else _csv_value(r[k]) for k in keys])
        return buf.getvalue().rstrip("\n")
    cells = [[_fmt(r.get(k), kind, precision) for k, kind in columns] for r in rows]
    widths = [max(len(k), *(len(c[i]) for c in cells)) if cells else len(k) for i, k in enumerate(keys)]
    lines = ["  ".join(k.ljust(w) if kind == "text" else k.rjust(w) for (k, kind), w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for c in cells:
        lines.append("  ".join(v.ljust(w) if kind == "text" else v.rjust(w)
                               for v, (_, kind), w in zip(c, columns, widths)))
    return "\n".join(lines)


def _csv_value(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _json_value(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


# --------------------------------------------------------------------------
# commands

def cmd_aggregate(args) -> int:
    tree = read_tree(args.tree)
    agg = aggregate_tree(tree)
    rows = []
    for nid in tree.preorder():
        depth = tree.depth(nid)
        rows.append({
            "node": ("  " * depth + nid) if args.format == "table" else nid,
            "name": tree.nodes[nid].name,
            "depth": depth,
            "scr": agg.scr(nid),
            "diversification": agg[nid].diversification_effect,
        })
    cols = [("node", "text"), ("name", "text"), ("scr", "money"), ("diversification", "money")]
    if args.format != "table":
        cols.insert(2, ("depth", "text"))
    print(render(cols, rows, args.format, args.precision, {"bscr": agg.bscr}))
    return EXIT_OK


def _principle_spec(tree: RiskTree, principle: str, drivers: str | None, covariances: str | None) -> PrincipleSpec:
    drv = cov = None
    if principle == "market":
        if drivers:
            drv = read_keyed_values(drivers, "driver")
        else:
            drv = {n: node.driver for n, node in tree.nodes.items() if node.driver is not None}
    if principle == "covariance" and covariances:
        cov = read_keyed_values(covariances, "covariance")
    return PrincipleSpec(principle, drv, cov)


def cmd_allocate(args) -> int:
    tree = read_tree(args.tree)
    spec = _principle_spec(tree, args.principle, args.drivers, args.covariances)
    res = allocate(tree, spec, args.at)
    agg = aggregate_tree(tree)
    rows = []
    for nid in res.nodes:
        a = res[nid]
        rows.append({"node": nid, "name": tree.nodes[nid].name, "standalone": agg.scr(nid),
                     "allocated": a.allocated, "allocation_ratio": a.allocation_ratio,
                     "level_ratio": a.level_ratio})
    rows.append({"node": "TOTAL", "name": "", "standalone": math.fsum(agg.scr(n) for n in res.nodes),
                 "allocated": math.fsum(res[n].allocated for n in res.nodes)})
    cols = [("node", "text"), ("name", "text"), ("standalone", "money"), ("allocated", "money")]
    if spec.principle == "sfep":
        cols += [("allocation_ratio", "pct"), ("level_ratio", "pct")]
    print(render(cols, rows, args.format, args.precision,
                 {"principle": spec.principle, "at": str(args.at), "total": res.total, "bscr": agg.bscr}))
    return EXIT_OK


def cmd_compare(args) -> int:
    tree = read_tree(args.tree)
    names = [p.strip() for p in args.principles.split(",") if p.strip()]
    specs = [_principle_spec(tree, p, args.drivers, None) if p in PRINCIPLES else PrincipleSpec(p) for p in names]
    report = compare_principles(tree, specs, args.at)
    rows = report.rows
    for r in rows:
        r["name"] = tree.nodes[r["node"]].name
    totals = report.column_totals()
    total_row = {"node": "TOTAL", "name": "", "standalone": float(math.fsum(report.standalone)), **totals}
    for p in report.principles:
        if p != "sfep":
            total_row[f"{p}_vs_sfep"] = totals[p] / totals["sfep"] - 1.0 if totals["sfep"] else None
    rows.append(total_row)
    cols = [("node", "text"), ("name", "text"), ("standalone", "money")]
    cols += [(p, "money") for p in report.principles]
    cols += [(f"{p}_vs_sfep", "pct") for p in report.principles if p != "sfep"]
    print(render(cols, rows, args.format, args.precision, {"at": str(args.at), "total": report.total}))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    rows = []
    for vx, vy, vxy in read_var_triplets(args.vars):
        try:
            c = calibrate_rho(vx, vy, vxy)
        except ValueError as exc:
            raise CliError(str(exc), EXIT_COMPUTE) from exc
        rows.append({"var_x": vx, "var_y": vy, "var_xy": vxy, "rho": c.rho, "clamped": c.clamped})
    cols = [("var_x", "money"), ("var_y", "money"), ("var_xy", "money"), ("rho", "num"), ("clamped", "text")]
    print(render(cols, rows, args.format, args.precision))
    return EXIT_OK


def cmd_check(args) -> int:
    tree = read_tree(args.tree)
    findings = run_property_suite(tree, args.seed, args.trials)
    if args.format == "json":
        print(json.dumps([f.__dict__ for f in findings], indent=2))
    else:
        for f in findings:
            print(f)
            if f.status == "fail" and f.counterexample:
                print(f"     counterexample: {json.dumps(f.counterexample)}")
    failed = [f for f in findings if not f.passed]
    if args.format != "json":
        print("all properties passed" if not failed else f"{len(failed)} properties failed")
    if failed and failed[0].name == "validation":
        return EXIT_INVALID
    return EXIT_OK if all_passed(findings) else EXIT_COMPUTE


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scr", description="Solvency II standard-formula aggregation and capital allocation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, tree=True):
        if tree:
            p.add_argument("--tree", required=True, help=f"tree JSON path or bundled fixture ({', '.join(FIXTURES)})")
        p.add_argument("--format", choices=("table", "csv", "json"), default="table")
        p.add_argument("--precision", type=int, default=2, help="decimals shown in table mode")

    p = sub.add_parser("aggregate", help="aggregated SCR and diversification effect per node")
    common(p)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("allocate", help="allocate the BSCR to a cut of the tree")
    common(p)
    p.add_argument("--principle", choices=PRINCIPLES, default="sfep")
    p.add_argument("--drivers", help="csv node_id,driver for the market principle")
    p.add_argument("--covariances", help="csv node_id,covariance for explicit covariance mode")
    p.add_argument("--at", default="leaves", help="cut: depth, node id (its children), 'leaves' or 'root'")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("compare", help="compare allocation principles on a cut")
    common(p)
    p.add_argument("--principles", default="sfep,marginal,haircut")
    p.add_argument("--drivers", help="csv node_id,driver for the market principle")
    p.add_argument("--at", default="1")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("calibrate", help="correlation from VaR triplets (csv var_x,var_y,var_xy)")
    common(p, tree=False)
    p.add_argument("--vars", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("check", help="run the property suite")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TreeError as exc:
        for f in exc.findings:
            print(f"{f.level}: {f.code}: {f.message}", file=sys.stderr)
        return EXIT_INVALID
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
