"""Command-line front end.

Every command writes one JSON document (to ``--output`` or standard output)
and a short human-readable summary to standard error. Exit codes: 0 on
success, 2 on a configuration error, 3 on a data error.
"""

from __future__ import annotations

import argparse
import csv
import enum
import json
import math
import sys
from collections.abc import Mapping, Sequence
from typing import Any

import numpy as np

from . import __version__, errors
from .core import Dataset, Hypothesis, HypothesisKind, IntervalSet, Level, validate
from .estimators import diff_in_means
from .intervals import (
    Interpretation,
    decision_family,
    default_grid,
    interval_for,
    invert_tests,
)
from .sharp_tests import METHODS as DATA_METHODS
from .sharp_tests import ResidualMode, reference_model, run_test
from .simulation import DgpSpec, MethodSpec, draw, error_decomposition, run
from .simulation.dgp import DgpKind, parse_kind
from .simulation.engine import METHODS as SIM_METHODS

SCHEMA_VERSION = 1
REQUIRED_COLUMNS = ("unit", "y", "d")

# method used by `simulate` when --method is not given
DEFAULT_SIM_METHOD = {
    DgpKind.APPENDIX_A: "normal",
    DgpKind.APPENDIX_B: "max_stat",
    DgpKind.FERMAN_SCALE: "ferman",
}


# ---------------------------------------------------------------- CSV

def ingest_csv(path) -> Dataset:
    """Read a ``unit,y,d[,x]`` file; columns are matched by name."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise errors.MissingHeader(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if not header or "y" not in header and "d" not in header and "unit" not in header:
            raise errors.MissingHeader(f"{path}: first line is not a unit,y,d[,x] header")
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise errors.MissingColumn(col)
        pos = {name: header.index(name) for name in (*REQUIRED_COLUMNS, "x") if name in header}
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise errors.ParseError(f"expected {len(header)} fields, found {len(row)}", line)
            rec: dict[str, Any] = {"unit": row[pos["unit"]].strip()}
            for name in ("y", "d", "x"):
                if name not in pos:
                    continue
                cell = row[pos[name]].strip()
                if name == "x" and cell == "":
                    rec["x"] = None
                    continue
                try:
                    rec[name] = int(cell) if name == "d" else float(cell)
                except ValueError:
                    raise errors.ParseError(f"column {name}: cannot parse {cell!r}", line) from None
            rows.append(rec)
    return validate(rows)


def write_csv(ds: Dataset, path) -> None:
    """Canonical CSV; floats use ``repr`` so that :func:`ingest_csv` restores
    them exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit", "y", "d", "x"] if ds.has_covariates else ["unit", "y", "d"])
        for r in ds.rows():
            out = [r["unit"], repr(r["y"]), r["d"]]
            if ds.has_covariates:
                out.append(repr(r["x"]))
            w.writerow(out)


# ---------------------------------------------------------------- JSON

def _encode(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return "null" if obj is None else ("true" if obj else "false")
    if isinstance(obj, enum.Enum):
        return json.dumps(obj.value)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (np.ndarray, Sequence, frozenset, set)):
        seq = sorted(obj, key=str) if isinstance(obj, (frozenset, set)) else list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (Mapping, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in seq) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON with every float written to 17 significant digits; NaN and
    infinities become ``null``."""
    return _encode(obj, indent, 0) + "\n"


# ---------------------------------------------------------------- config

def _param_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        low = text.lower()
        if low in ("true", "false"):
            return low == "true"
        return text


def parse_params(pairs: Sequence[str] | None) -> dict[str, Any]:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise errors.ConfigError(f"--param expects key=value, got {item!r}")
        out[key.strip()] = _param_value(value.strip())
    return out


def _level(confidence: float) -> Level:
    return Level.from_confidence(confidence)


def effective_config(args: argparse.Namespace) -> dict[str, Any]:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    cfg["gamma"] = Level.from_confidence(args.level).gamma
    if "param" in cfg:
        cfg["param"] = parse_params(args.param)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", "-o", help="write JSON here instead of standard output")
    common.add_argument("--level", type=float, default=0.95, help="confidence level (gamma = 1 - level)")
    common.add_argument("--budget", type=int, default=200_000, help="enumeration / sampling budget")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--residual-mode", default=ResidualMode.ALL_N_NULL_IMPOSED.value,
                        choices=[m.value for m in ResidualMode])

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", "-i", required=True, help="CSV with header unit,y,d[,x]")
    data.add_argument("--method", default="perm", choices=DATA_METHODS)

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--grid-lo", type=float)
    grid.add_argument("--grid-hi", type=float)
    grid.add_argument("--grid-n", type=int, default=2001)

    dgp = argparse.ArgumentParser(add_help=False)
    dgp.add_argument("--dgp", required=True, help="data-generating process, e.g. appendix_a")
    dgp.add_argument("--param", action="append", metavar="K=V", help="DGP parameter override (repeatable)")

    p = argparse.ArgumentParser(prog="fewtreat", description="Inference with few treated units.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", parents=[common, data], help="test H0: effect = c")
    t.add_argument("--null", type=float, required=True, help="hypothesized effect c")
    t.add_argument("--hypothesis", default="sharp", choices=[k.value for k in HypothesisKind])
    t.set_defaults(func=cmd_test)

    iv = sub.add_parser("interval", parents=[common, data, grid], help="prediction set or realized-effect interval")
    iv.add_argument("--interpretation", default="prediction", choices=["prediction", "realized"])
    iv.set_defaults(func=cmd_interval)

    inv = sub.add_parser("invert", parents=[common, data, grid], help="invert a decision-rule family on a grid")
    inv.set_defaults(func=cmd_invert)

    s = sub.add_parser("simulate", parents=[common, dgp], help="Monte Carlo coverage / size report")
    s.add_argument("--method", choices=SIM_METHODS, help="default depends on the DGP")
    s.add_argument("--reps", type=int, default=10_000)
    s.add_argument("--null", type=float, help="also test this value on every replication")
    s.add_argument("--cond-outer", type=int, help="conditional resampling: effect draws")
    s.add_argument("--cond-inner", type=int, default=200, help="conditional resampling: re-draws per effect draw")
    s.set_defaults(func=cmd_simulate)

    dc = sub.add_parser("decompose", parents=[common, dgp], help="error decomposition on simulated draws")
    dc.add_argument("--reps", type=int, default=10)
    dc.add_argument("--beta", type=float, help="target; defaults to the DGP's ATT")
    dc.set_defaults(func=cmd_decompose)
    return p


# ---------------------------------------------------------------- commands

def cmd_test(args) -> tuple[dict, str]:
    ds = ingest_csv(args.input)
    level = _level(args.level)
    hyp = Hypothesis(args.null, HypothesisKind(args.hypothesis))
    res = run_test(ds, hyp, level, args.method, budget=args.budget, seed=args.seed, residual_mode=args.residual_mode)
    verdict = "reject" if res.reject else "do not reject"
    return {"result": res.to_dict()}, f"{args.method}: p = {res.p_value:.6g}, {verdict} at gamma = {level.gamma:g}"


def _grid(args, ds: Dataset, budget: int, seed: int):
    if args.grid_n < 1:
        raise errors.EmptyGrid("--grid-n must be at least 1")
    qm = reference_model(ds, "quantile", budget, seed)
    return default_grid(diff_in_means(ds), qm, args.grid_n, args.grid_lo, args.grid_hi)


def _describe(s: IntervalSet) -> str:
    if s.is_empty:
        return "empty set"
    return " U ".join(f"[{lo:.6g}, {hi:.6g}]" for lo, hi in s)


def cmd_interval(args) -> tuple[dict, str]:
    ds = ingest_csv(args.input)
    level = _level(args.level)
    grid = _grid(args, ds, args.budget, args.seed) if args.method in ("perm", "ct") else None
    rep = interval_for(
        ds, args.method, level, Interpretation.parse(args.interpretation),
        budget=args.budget, seed=args.seed, residual_mode=args.residual_mode, grid=grid,
    )
    out = {"result": rep.to_dict()}
    if grid is not None:
        out["grid"] = {"lo": grid[0], "hi": grid[1], "step": grid[2]}
    return out, f"{args.method} {rep.interpretation.value}: {_describe(rep.set)}"


def cmd_invert(args) -> tuple[dict, str]:
    ds = ingest_csv(args.input)
    level = _level(args.level)
    grid = _grid(args, ds, args.budget, args.seed)
    phi = decision_family(ds, args.method, level, budget=args.budget, seed=args.seed, residual_mode=args.residual_mode)
    s = invert_tests(phi, grid)
    out = {"result": {"intervals": s.to_list(), "method": args.method, "gamma": level.gamma},
           "grid": {"lo": grid[0], "hi": grid[1], "step": grid[2]}}
    return out, f"{args.method} acceptance region: {_describe(s)}"


def _spec(args) -> DgpSpec:
    return DgpSpec(parse_kind(args.dgp), parse_params(args.param), args.seed)


def cmd_simulate(args) -> tuple[dict, str]:
    spec = _spec(args)
    level = _level(args.level)
    name = args.method or DEFAULT_SIM_METHOD.get(spec.kind, "quantile")
    args.method = name  # echoed in the effective configuration
    method = MethodSpec(name, level.gamma, args.null, args.budget, args.residual_mode)
    conditional = (args.cond_outer, args.cond_inner) if args.cond_outer else None
    report = run(spec, method, args.reps, conditional=conditional)
    parts = [f"{spec.kind.value} / {name}, R = {report.replications}"]
    if report.unconditional_coverage is not None:
        parts.append(f"coverage {report.unconditional_coverage:.4f}")
    if report.rejection_rate is not None:
        parts.append(f"rejection rate {report.rejection_rate:.4f}")
    if report.empty_set_frequency:
        parts.append(f"empty {report.empty_set_frequency:.4f}")
    return {"result": report.to_dict()}, ", ".join(parts)


def cmd_decompose(args) -> tuple[dict, str]:
    spec = _spec(args)
    if args.reps < 1:
        raise errors.ConfigError("--reps must be at least 1")
    rows = []
    for i in range(args.reps):
        sample = draw(spec, i)
        beta = sample.att if args.beta is None else args.beta
        dec = error_decomposition(sample, beta)
        est = diff_in_means(sample.dataset)
        rows.append({
            "replication": i,
            "beta_dm": est,
            "beta": beta,
            "satt": sample.satt,
            "heterogeneity": dec.heterogeneity,
            "treated_noise": dec.treated_noise,
            "control_noise": dec.control_noise,
            "identity_error": (est - beta) - dec.total,
        })
    worst = max(abs(r["identity_error"]) for r in rows)
    return {"result": {"dgp": spec.to_dict(), "draws": rows}}, f"{len(rows)} draws, max identity error {worst:.3g}"


# ---------------------------------------------------------------- entry

def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad flags
    try:
        body, summary = args.func(args)
    except errors.ConfigError as exc:
        print(f"fewtreat: configuration error: {exc}", file=sys.stderr)
        return 2
    except (errors.DataError, OSError, UnicodeDecodeError) as exc:
        print(f"fewtreat: data error: {exc}", file=sys.stderr)
        return 3
    except errors.FewTreatError as exc:
        print(f"fewtreat: {exc}", file=sys.stderr)
        return 1
    doc = {"schema_version": SCHEMA_VERSION, "seed": args.seed, "command": args.command,
           "config": effective_config(args), **body}
    _emit(dumps(doc), args.output)
    print(summary, file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
