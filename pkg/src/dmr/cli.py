"""Command-line interface.

``dmr select`` runs model selection on a CSV file and writes a JSON report
(or the path table as CSV); ``dmr simulate`` runs the Monte Carlo
experiments and prints their metrics as CSV.

Exit status: 0 on success, 2 for invalid input, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from collections.abc import Sequence

import numpy as np

from .constraints import Delete, ElementaryConstraint, Merge, constraints_to_model
from .core import SelectionResult, dmr
from .errors import InputError, NumericalError, UnknownLevel
from .evaluation import ExperimentSpec, run_monte_carlo, write_metrics_csv
from .glm import dmr_glm
from .model_matrix import ColumnSpec, DesignMatrix, build_design_matrix

FORMAT_VERSION = "1"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


# ---------------------------------------------------------------------------
# JSON with round-trip floats
# ---------------------------------------------------------------------------


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def dumps_json(obj, indent: int = 2, _level: int = 0) -> str:
    """``json.dumps`` variant printing floats with 17 significant digits.

    Non-finite floats become ``null``.
    """
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps_json(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj) if math.isfinite(obj) else "null"
    return json.dumps(obj)


# ---------------------------------------------------------------------------
# Input
# ---------------------------------------------------------------------------


def parse_factor_flag(text: str) -> tuple[str, tuple[str, ...] | None]:
    """``NAME`` or ``NAME=lvl1,lvl2,...``."""
    name, sep, levels = text.partition("=")
    name = name.strip()
    if not name:
        raise InputError(f"--factor {text!r}: missing column name")
    if not sep:
        return name, None
    parsed = tuple(lvl.strip() for lvl in levels.split(","))
    if any(not lvl for lvl in parsed):
        raise InputError(f"--factor {text!r}: empty level label")
    return name, parsed


def load_schema(path: str) -> dict:
    """Sidecar schema: ``{"response": ..., "factors": {name: [levels] | null},
    "continuous": [...], "ignore": [...]}``."""
    try:
        with open(path, encoding="utf-8") as fh:
            schema = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read schema {path}: {exc}") from None
    if not isinstance(schema, dict):
        raise InputError(f"schema {path} must be a JSON object")
    return schema


def read_csv(path: str) -> tuple[list[str], list[list[str]], list[int]]:
    """Header, data rows and the file line number of every data row."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise InputError(f"{path}: line 1: {exc}") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise InputError(f"{path}: line 1: duplicate column names")
        rows, lines = [], []
        try:
            for row in reader:
                if not row or all(not cell.strip() for cell in row):
                    continue
                if len(row) != len(header):
                    raise InputError(
                        f"{path}: line {reader.line_num}: expected {len(header)} fields, got {len(row)}"
                    )
                rows.append([cell.strip() for cell in row])
                lines.append(reader.line_num)
        except (csv.Error, UnicodeDecodeError) as exc:
            raise InputError(f"{path}: line {reader.line_num}: {exc}") from None
    return header, rows, lines


def _level_order(values: Sequence[str]) -> tuple[str, ...]:
    distinct = set(values)
    try:
        return tuple(sorted(distinct, key=float))
    except ValueError:
        return tuple(sorted(distinct))


def build_specs(header, rows, response, factors, continuous=(), ignore=()) -> list[ColumnSpec]:
    """Column roles: declared factors, the response, everything else continuous."""
    known = set(header)
    for name in [response, *factors, *continuous, *ignore]:
        if name not in known:
            raise InputError(f"column {name!r} is not in the CSV header")
    if response in factors:
        raise InputError(f"response {response!r} cannot also be a factor")
    specs = []
    for idx, name in enumerate(header):
        if name in ignore:
            continue
        if name == response:
            specs.append(ColumnSpec(name, "response"))
        elif name in factors:
            levels = factors[name]
            if levels is None:
                levels = _level_order([r[idx] for r in rows])
            specs.append(ColumnSpec(name, "factor", tuple(levels)))
        elif continuous and name not in continuous:
            continue
        else:
            specs.append(ColumnSpec(name, "continuous"))
    return specs


def table_from_rows(header, rows, lines, specs) -> dict:
    """Column-oriented dataset with numeric parsing and line-numbered errors."""
    data = {}
    for spec in specs:
        idx = header.index(spec.name)
        cells = [r[idx] for r in rows]
        for cell, line in zip(cells, lines):
            if cell == "":
                raise InputError(f"line {line}: column {spec.name!r}: missing value")
        if spec.kind == "factor":
            data[spec.name] = cells
            continue
        values = np.empty(len(cells))
        for i, (cell, line) in enumerate(zip(cells, lines)):
            try:
                values[i] = float(cell)
            except ValueError:
                raise InputError(f"line {line}: column {spec.name!r}: {cell!r} is not a number") from None
            if not math.isfinite(values[i]):
                raise InputError(f"line {line}: column {spec.name!r}: {cell!r} is not finite")
        data[spec.name] = values
    return data


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def constraint_record(c: ElementaryConstraint, X: DesignMatrix) -> dict:
    rec = {"text": str(c)}
    if c.k == 0:
        rec.update(type="delete", block=0, j=c.j, variable=X.continuous_names[c.j - 1])
        return rec
    levels = X.factor_levels[c.k - 1]
    rec.update(factor=X.factor_names[c.k - 1])
    if isinstance(c, Delete):
        rec.update(type="delete", block=c.k, j=c.j, level=levels[c.j - 1])
    else:
        rec.update(type="merge", block=c.k, i=c.i, j=c.j, levels=[levels[c.i - 1], levels[c.j - 1]])
    return rec


def constraint_from_record(rec: dict) -> ElementaryConstraint:
    if rec["type"] == "delete":
        return Delete(int(rec["block"]), int(rec["j"]))
    if rec["type"] == "merge":
        return Merge(int(rec["block"]), int(rec["i"]), int(rec["j"]))
    raise InputError(f"unknown constraint type {rec['type']!r}")


def labelled_partitions(model, X: DesignMatrix) -> dict[str, list[list[str]]]:
    return {
        name: [[levels[j - 1] for j in cluster] for cluster in P]
        for name, levels, P in zip(X.factor_names, X.factor_levels, model.partitions)
    }


def build_report(result: SelectionResult, X: DesignMatrix, response: str, linkage: float, source: str = "") -> dict:
    path = result.path
    loss_name = "rss" if path.rss is not None else "deviance"
    loss = path.rss if path.rss is not None else path.deviance
    steps = []
    for m in range(len(path)):
        steps.append(
            {
                "step": m,
                "height": float(path.heights[m]),
                "constraint": None if m == 0 else constraint_record(path.constraints[m - 1], X),
                loss_name: float(loss[m]),
                "gic": float(path.gic[m]),
                "size": int(path.sizes[m]),
            }
        )
    dendrograms = {}
    for tree in result.dendrograms:
        levels = X.factor_levels[tree.k - 1]
        dendrograms[X.factor_names[tree.k - 1]] = [
            {
                "step": s,
                "left": [levels[j - 1] for j in m.left],
                "right": [levels[j - 1] for j in m.right],
                "height": m.height,
            }
            for s, m in enumerate(tree.merges, start=1)
        ]
    model = result.model
    return {
        "format_version": FORMAT_VERSION,
        "input": source,
        "response": response,
        "family": result.family,
        "criterion": {"name": result.criterion, "penalty": result.penalty},
        "linkage": linkage,
        "n": X.n,
        "p": X.p,
        "selected": {
            "step": result.index,
            "size": model.size,
            "gic": float(path.gic[result.index]),
        },
        "continuous": {
            "retained": [X.continuous_names[j - 1] for j in model.retained],
            "deleted": [X.continuous_names[j - 1] for j in model.deleted],
        },
        "partitions": labelled_partitions(model, X),
        "coefficients": {name: float(b) for name, b in zip(X.column_names, result.beta)},
        "constraints": [constraint_record(c, X) for c in path.constraints[: result.index]],
        "path": steps,
        "failed_steps": list(path.failed),
        "dendrograms": dendrograms,
    }


def partitions_from_report(report: dict, X: DesignMatrix) -> dict[str, list[list[str]]]:
    """Rebuild the reported partitions from the reported constraint list."""
    model = constraints_to_model([constraint_from_record(r) for r in report["constraints"]], X)
    return labelled_partitions(model, X)


def write_path_csv(report: dict, stream) -> None:
    loss_name = "rss" if "rss" in report["path"][0] else "deviance"
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["step", "height", "constraint", loss_name, "gic", "size", "selected"])
    for row in report["path"]:
        c = row["constraint"]
        writer.writerow(
            [
                row["step"],
                format_float(row["height"]),
                "" if c is None else c["text"],
                format_float(row[loss_name]),
                format_float(row["gic"]) if math.isfinite(row["gic"]) else "inf",
                row["size"],
                int(row["step"] == report["selected"]["step"]),
            ]
        )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _penalty(text: str):
    if text.lower() in ("bic", "aic"):
        return text.lower()
    try:
        value = float(text)
    except ValueError:
        raise InputError(f"--penalty must be 'bic', 'aic' or a positive number, got {text!r}") from None
    if not (value > 0 and math.isfinite(value)):
        raise InputError(f"--penalty must be positive, got {text!r}")
    return value


def _linkage(value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise InputError(f"--linkage must lie in [0, 1], got {value}")
    return value


def cmd_select(args, out) -> int:
    penalty = _penalty(args.penalty)
    linkage = _linkage(args.linkage)
    schema = load_schema(args.schema) if args.schema else {}
    response = args.response or schema.get("response")
    if not response:
        raise InputError("no response column: pass --response or give one in the schema")

    factors = {}
    raw = schema.get("factors", {})
    if isinstance(raw, list):
        raw = {name: None for name in raw}
    for name, levels in raw.items():
        factors[name] = None if levels is None else tuple(str(v) for v in levels)
    for flag in args.factor or []:
        name, levels = parse_factor_flag(flag)
        factors[name] = levels
    continuous = tuple(args.continuous or schema.get("continuous", ()))
    ignore = tuple(args.ignore or schema.get("ignore", ()))

    header, rows, lines = read_csv(args.input)
    specs = build_specs(header, rows, response, factors, continuous, ignore)
    data = table_from_rows(header, rows, lines, specs)
    try:
        X = build_design_matrix(data, specs)
    except UnknownLevel as exc:
        raise InputError(
            f"line {lines[exc.row]}: column {exc.column!r}: level {exc.level!r} is not declared"
        ) from None
    y = data[response]

    if args.family == "binomial":
        result = dmr_glm(X, y, "binomial", linkage=linkage, penalty=penalty)
    else:
        result = dmr(X, y, linkage=linkage, penalty=penalty)
    report = build_report(result, X, response, linkage, source=args.input)
    if args.format == "csv":
        write_path_csv(report, out)
    else:
        out.write(dumps_json(report) + "\n")
    return EXIT_OK


def cmd_simulate(args, out) -> int:
    if args.reps < 1:
        raise InputError(f"--reps must be >= 1, got {args.reps}")
    if args.workers < 1:
        raise InputError(f"--workers must be >= 1, got {args.workers}")
    spec = ExperimentSpec(args.experiment, args.c)
    metrics = run_monte_carlo(spec, reps=args.reps, seed=args.seed, workers=args.workers)
    write_metrics_csv([metrics], out)
    if args.timing:
        print(f"{metrics.selector}: {metrics.seconds:.3f} s for {metrics.reps} replications", file=sys.stderr)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dmr", description="Delete-or-merge regressors model selection.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sel = sub.add_parser("select", help="select a model for a CSV data set")
    sel.add_argument("input", help="CSV file with a header row")
    sel.add_argument("--response", help="response column")
    sel.add_argument(
        "--factor",
        action="append",
        metavar="NAME[=L1,L2,...]",
        help="declare a factor; the first listed level is the reference (repeatable)",
    )
    sel.add_argument("--continuous", action="append", metavar="NAME", help="restrict continuous columns")
    sel.add_argument("--ignore", action="append", metavar="NAME", help="column to leave out")
    sel.add_argument("--schema", help="JSON sidecar with response/factors/continuous/ignore")
    sel.add_argument("--family", choices=("gaussian", "binomial"), default="gaussian")
    sel.add_argument("--penalty", default="bic", help="'bic' (default), 'aic' or a positive per-parameter penalty")
    sel.add_argument("--linkage", type=float, default=0.0, help="0 = complete (default), 1 = single")
    sel.add_argument("--format", choices=("json", "csv"), default="json")
    sel.add_argument("-o", "--output", help="write to this file instead of stdout")
    sel.set_defaults(func=cmd_select)

    sim = sub.add_parser("simulate", help="Monte Carlo study of one experiment")
    sim.add_argument("--experiment", type=int, choices=(1, 2, 3), required=True)
    sim.add_argument("--c", type=int, default=1, help="replication multiplier of the design")
    sim.add_argument("--reps", type=int, default=100)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--timing", action="store_true", help="report wall-clock time on stderr")
    sim.add_argument("-o", "--output", help="write to this file instead of stdout")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.output:
            with open(args.output, "w", encoding="utf-8", newline="") as out:
                return args.func(args, out)
        return args.func(args, sys.stdout)
    except InputError as exc:
        print(f"dmr: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"dmr: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
