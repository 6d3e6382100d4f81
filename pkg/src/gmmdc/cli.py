"""Command-line front end: estimate from CSV files or run simulation studies.

Results go to stdout (a human-readable table, plus a JSON mirror written with
``--json``); logs and progress go to stderr. Exit codes: 0 on success, 2 on
data errors, 3 on numerical failure. Table and JSON are rendered from the
same result dictionary, so they always agree.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from .errors import GmmError, JNotDefinedError
from .estimate import DEFAULT_TOL, FitPlan, fit
from .inference import j_test, mr_bootstrap, t_test
from .linmoment import PanelDataset, WeightSpec, build_ab_system, build_iv_system
from .montecarlo import (
    IvLocal,
    PanelLagMiss,
    PanelRandomCoef,
    StudyConfig,
    run_study,
)
from .variance import variance_report

SCHEMA = "gmm-dc/1"


class DataError(Exception):
    """Invalid input data or request (exit code 2)."""


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            result = cmd_estimate(args)
            _print_estimate_table(result)
        else:
            result = cmd_simulate(args)
            _print_simulate_table(result)
        if args.json:
            with open(args.json, "w", encoding="utf-8") as fh:
                json.dump(result, fh, indent=2)
                fh.write("\n")
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GmmError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmmdc",
        description="Linear GMM estimation with doubly corrected standard errors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate a model from a CSV file")
    est_sub = est.add_subparsers(dest="model", required=True)
    for model in ("iv", "panel"):
        p = est_sub.add_parser(model)
        p.add_argument("--data", required=True, help="CSV file with a header row")
        p.add_argument("--y", required=True, help="outcome column")
        p.add_argument("--x", required=(model == "iv"),
                       help="regressor column(s), comma separated; "
                            "ignored in panel ar1 mode")
        if model == "iv":
            p.add_argument("--z", required=True, help="instrument columns, comma separated")
        else:
            p.add_argument("--id", required=True, help="individual identifier column")
            p.add_argument("--time", required=True, help="time period column")
            p.add_argument("--mode", choices=["predetermined-x", "ar1"],
                           default="predetermined-x")
        p.add_argument("--estimator", choices=["one-step", "two-step", "iterated"],
                       default="two-step")
        p.add_argument("--weight", choices=["data-average", "identity"],
                       default="data-average")
        p.add_argument("--centered", action="store_true",
                       help="use the centered second-moment weight in efficient steps")
        p.add_argument("--tol", type=float, default=DEFAULT_TOL,
                       help="convergence tolerance for the iterated estimator")
        p.add_argument("--se-kind", choices=["conv", "w", "dc"], default="dc",
                       help="standard error used for the t/p/CI columns")
        p.add_argument("--null", default=None,
                       help="null values for the t tests, comma separated (default 0)")
        p.add_argument("--bootstrap", type=int, default=None, metavar="B",
                       help="run the percentile-t bootstrap with B replications")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--json", default=None, help="write the JSON mirror to this path")

    sim = sub.add_parser("simulate", help="run a Monte Carlo study")
    sim.add_argument("--config", default=None, help="JSON study configuration file")
    sim.add_argument("--design", choices=["iv", "panel-rc", "panel-lag"], default=None)
    sim.add_argument("--n", type=int, default=None, help="sample size (iv design)")
    sim.add_argument("--N", type=int, default=None, help="individuals (panel designs)")
    sim.add_argument("--T", type=int, default=None, help="periods (panel designs)")
    sim.add_argument("--alpha0", type=float, default=0.0)
    sim.add_argument("--reps", type=int, default=1000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--estimators", default="one,two,iter")
    sim.add_argument("--bootstrap-B", type=int, default=None)
    sim.add_argument("--bootstrap-estimators", default=None)
    sim.add_argument("--fixed-misspec", action="store_true")
    sim.add_argument("--centered", action="store_true")
    sim.add_argument("--threads", type=int, default=None,
                     help="worker processes (default: GMMDC_THREADS or all cores)")
    sim.add_argument("--json", default=None, help="write the JSON mirror to this path")
    return parser


# ---------------------------------------------------------------------------
# estimate


def _read_csv(path: str) -> Dict[str, List[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: missing header row")
        columns: Dict[str, List[str]] = {name: [] for name in reader.fieldnames}
        for row in reader:
            for name in columns:
                columns[name].append(row[name])
    return columns


def _numeric(columns: Dict[str, List[str]], names: List[str]) -> np.ndarray:
    out = []
    for name in names:
        if name not in columns:
            raise DataError(f"column {name!r} not found; available: {sorted(columns)}")
        try:
            out.append(np.asarray([float(v) for v in columns[name]]))
        except (TypeError, ValueError) as exc:
            raise DataError(f"column {name!r} has non-numeric cells: {exc}") from None
    return np.column_stack(out)


def _panel_arrays(columns, id_col, time_col, value_cols):
    ids_raw = columns.get(id_col)
    times = _numeric(columns, [time_col])[:, 0]
    if ids_raw is None:
        raise DataError(f"column {id_col!r} not found")
    values = _numeric(columns, value_cols)
    order: Dict[str, int] = {}
    for label in ids_raw:
        order.setdefault(label, len(order))
    ids = np.asarray([order[label] for label in ids_raw])
    n_ids = len(order)
    time_values = np.unique(times)
    T = len(time_values)
    time_index = {t: i for i, t in enumerate(time_values)}
    filled = np.zeros((n_ids, T), dtype=bool)
    panels = [np.full((n_ids, T), np.nan) for _ in value_cols]
    for row, (i, t) in enumerate(zip(ids, times)):
        ti = time_index[t]
        if filled[i, ti]:
            raise DataError(f"duplicate (id, time) cell for id {ids_raw[row]!r}, time {t}")
        filled[i, ti] = True
        for p, panel in enumerate(panels):
            panel[i, ti] = values[row, p]
    if not filled.all():
        raise DataError("panel is unbalanced: some (id, time) cells are missing")
    return panels


def cmd_estimate(args) -> dict:
    columns = _read_csv(args.data)
    if args.model == "iv":
        x_names = args.x.split(",")
        y = _numeric(columns, [args.y])[:, 0]
        X = _numeric(columns, x_names)
        Z = _numeric(columns, args.z.split(","))
        sys_ = build_iv_system(y, X, Z)
        coef_names = x_names
    else:
        mode = "predetermined" if args.mode == "predetermined-x" else "ar1"
        if mode == "ar1":
            (ypanel,) = _panel_arrays(columns, args.id, args.time, [args.y])
            panel = PanelDataset(y=ypanel)
            coef_names = [f"lag({args.y})"]
        else:
            if not args.x or len(args.x.split(",")) != 1:
                raise DataError("panel models take a single regressor column")
            x_names = args.x.split(",")
            ypanel, xpanel = _panel_arrays(columns, args.id, args.time, [args.y] + x_names)
            panel = PanelDataset(y=ypanel, x=xpanel)
            coef_names = x_names
        try:
            sys_ = build_ab_system(panel, mode=mode)
        except ValueError as exc:
            raise DataError(str(exc)) from None

    w0 = WeightSpec.identity() if args.weight == "identity" else WeightSpec.data_average()
    plan = FitPlan(args.estimator, w0, centered=args.centered, tol=args.tol)
    fit_result = fit(sys_, plan)
    report = variance_report(sys_, fit_result)

    nulls = [0.0] * sys_.k
    if args.null:
        parts = [float(v) for v in args.null.split(",")]
        if len(parts) not in (1, sys_.k):
            raise DataError(f"--null takes 1 or {sys_.k} values")
        nulls = parts * sys_.k if len(parts) == 1 else parts

    coefficients = []
    for c, name in enumerate(coef_names):
        test = t_test(fit_result, report, args.se_kind, c, nulls[c])
        entry = {
            "name": name,
            "estimate": float(fit_result.theta[c]),
            "se_conv": float(report.se_conv[c]),
            "se_w": float(report.se_w[c]) if report.se_w is not None else None,
            "se_dc": float(report.se_dc[c]),
            "se_kind": args.se_kind,
            "null_value": nulls[c],
            "t": test.statistic,
            "p_value": test.p_value,
            "ci_lower": test.ci_lower,
            "ci_upper": test.ci_upper,
            "bootstrap": None,
        }
        if args.bootstrap:
            boot = mr_bootstrap(sys_, plan, c, args.bootstrap, args.seed,
                                null_value=nulls[c])
            entry["bootstrap"] = {
                "B": boot.B,
                "crit_abs": boot.crit_abs,
                "reject_5pct": boot.reject_5pct,
                "failures": boot.failures,
                "t_original": boot.t_original,
            }
        coefficients.append(entry)

    j_entry = None
    j_note = None
    try:
        j = j_test(sys_, fit_result)
        j_entry = {"statistic": j.statistic, "df": j.df, "p_value": j.p_value}
    except JNotDefinedError:
        j_note = "model is just-identified (q = k); the J test is not defined"

    def matrix(m):
        return None if m is None else [[float(v) for v in row] for row in np.atleast_2d(m)]

    return {
        "schema": SCHEMA,
        "command": "estimate",
        "model": args.model,
        "estimator": args.estimator,
        "weight": args.weight,
        "centered": args.centered,
        "n_units": sys_.n,
        "q": sys_.q,
        "k": sys_.k,
        "converged": fit_result.converged,
        "iterations": fit_result.iterations,
        "coefficients": coefficients,
        "j_test": j_entry,
        "j_note": j_note,
        "variance": {
            "V_conv": matrix(report.V_conv),
            "V_w": matrix(report.V_w),
            "V_dc": matrix(report.V_dc),
            "D_hat": matrix(report.D_hat),
            "Sigma_n": matrix(report.Sigma_n),
            "C_hat": matrix(report.C_hat),
            "se_conv": list(map(float, report.se_conv)),
            "se_w": None if report.se_w is None else list(map(float, report.se_w)),
            "se_dc": list(map(float, report.se_dc)),
        },
    }


def _print_estimate_table(result: dict) -> None:
    print(f"{result['model']} {result['estimator']} GMM  "
          f"(n={result['n_units']}, q={result['q']}, k={result['k']})")
    header = (f"{'coef':<12}{'estimate':>12}{'se_conv':>11}{'se_w':>11}"
              f"{'se_dc':>11}{'t':>9}{'p':>8}  95% CI")
    print(header)
    for c in result["coefficients"]:
        se_w = f"{c['se_w']:.4f}" if c["se_w"] is not None else "-"
        print(f"{c['name']:<12}{c['estimate']:>12.6f}{c['se_conv']:>11.4f}"
              f"{se_w:>11}{c['se_dc']:>11.4f}{c['t']:>9.3f}{c['p_value']:>8.4f}"
              f"  [{c['ci_lower']:.4f}, {c['ci_upper']:.4f}]")
        if c["bootstrap"]:
            b = c["bootstrap"]
            verdict = "reject" if b["reject_5pct"] else "fail to reject"
            print(f"{'':<12}bootstrap(B={b['B']}): |t|={abs(b['t_original']):.3f} "
                  f"vs crit {b['crit_abs']:.3f} -> {verdict} at 5% "
                  f"({b['failures']} degenerate resamples)")
    if result["j_test"]:
        j = result["j_test"]
        print(f"J = {j['statistic']:.4f}  (df = {j['df']}, p = {j['p_value']:.4f})")
    elif result["j_note"]:
        print(f"note: {result['j_note']}")


# ---------------------------------------------------------------------------
# simulate


def _design_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "iv":
        return IvLocal(n=int(d["n"]), alpha0=float(d.get("alpha0", 0.0)))
    if kind == "panel-rc":
        return PanelRandomCoef(N=int(d["N"]), T=int(d["T"]), alpha0=float(d.get("alpha0", 0.0)))
    if kind == "panel-lag":
        return PanelLagMiss(N=int(d["N"]), T=int(d["T"]), alpha0=float(d.get("alpha0", 0.0)))
    raise DataError(f"unknown design kind {kind!r}")


def _config_from_args(args) -> StudyConfig:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        return StudyConfig(
            design=_design_from_dict(raw["design"]),
            replications=int(raw["replications"]),
            estimators=tuple(raw.get("estimators", ("one", "two", "iter"))),
            seed=int(raw.get("seed", 0)),
            bootstrap_B=raw.get("bootstrap_B"),
            bootstrap_estimators=tuple(raw["bootstrap_estimators"])
            if raw.get("bootstrap_estimators") else None,
            fixed_misspec=bool(raw.get("fixed_misspec", False)),
            centered=bool(raw.get("centered", False)),
        )
    if args.design is None:
        raise DataError("either --config or --design is required")
    if args.design == "iv":
        if args.n is None:
            raise DataError("--n is required for the iv design")
        design = IvLocal(n=args.n, alpha0=args.alpha0)
    else:
        if args.N is None or args.T is None:
            raise DataError("--N and --T are required for panel designs")
        cls = PanelRandomCoef if args.design == "panel-rc" else PanelLagMiss
        design = cls(N=args.N, T=args.T, alpha0=args.alpha0)
    return StudyConfig(
        design=design,
        replications=args.reps,
        estimators=tuple(args.estimators.split(",")),
        seed=args.seed,
        bootstrap_B=args.bootstrap_B,
        bootstrap_estimators=tuple(args.bootstrap_estimators.split(","))
        if args.bootstrap_estimators else None,
        fixed_misspec=args.fixed_misspec,
        centered=args.centered,
    )


def _resolve_threads(value: Optional[int]) -> int:
    if value is not None:
        return value
    env = os.environ.get("GMMDC_THREADS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def cmd_simulate(args) -> dict:
    cfg = _config_from_args(args)
    threads = _resolve_threads(args.threads)

    def progress(done, total):
        print(f"\r{done}/{total} replications", end="", file=sys.stderr, flush=True)

    summary = run_study(cfg, threads=threads, progress=progress)
    print(file=sys.stderr)

    design = cfg.design
    design_dict = {"kind": design.label, "alpha0": design.alpha0}
    if isinstance(design, IvLocal):
        design_dict["n"] = design.n
    else:
        design_dict["N"] = design.N
        design_dict["T"] = design.T

    blocks = {}
    for est, s in summary.estimators.items():
        blocks[est] = {
            "mean_theta": s.mean_theta,
            "sd_theta": s.sd_theta,
            "mean_se_conv": s.mean_se_conv,
            "mean_se_w": s.mean_se_w,
            "mean_se_dc": s.mean_se_dc,
            "reject_conv": s.reject_conv,
            "reject_w": s.reject_w,
            "reject_dc": s.reject_dc,
            "reject_boot": s.reject_boot,
            "reject_j": s.reject_j,
            "failures": s.failures,
            "bootstrap_failures": s.bootstrap_failures,
            "sd_degenerate": s.sd_degenerate,
        }
    return {
        "schema": SCHEMA,
        "command": "simulate",
        "config": {
            "design": design_dict,
            "replications": cfg.replications,
            "estimators": list(cfg.estimators),
            "seed": cfg.seed,
            "bootstrap_B": cfg.bootstrap_B,
            "fixed_misspec": cfg.fixed_misspec,
            "centered": cfg.centered,
            "threads": threads,
        },
        "estimators": blocks,
        "failure_warning": summary.failure_warning,
    }


def _print_simulate_table(result: dict) -> None:
    cfg = result["config"]
    d = cfg["design"]
    size = f"n={d['n']}" if "n" in d else f"N={d['N']}, T={d['T']}"
    print(f"design {d['kind']} ({size}, alpha0={d['alpha0']}), "
          f"{cfg['replications']} replications, seed {cfg['seed']}")
    names = {"one": "one-step", "two": "two-step", "iter": "iterated"}
    rows = [
        ("mean", "mean_theta"), ("sd", "sd_theta"),
        ("se", "mean_se_conv"), ("se_w", "mean_se_w"), ("se_dc", "mean_se_dc"),
        ("rej t", "reject_conv"), ("rej t_w", "reject_w"), ("rej t_dc", "reject_dc"),
        ("rej t_dc-bs", "reject_boot"), ("rej J", "reject_j"),
    ]
    ests = list(result["estimators"])
    print(f"{'':<14}" + "".join(f"{names[e]:>12}" for e in ests))
    for label, key in rows:
        values = [result["estimators"][e][key] for e in ests]
        if all(v is None for v in values):
            continue
        cells = "".join(f"{v:>12.4f}" if v is not None else f"{'-':>12}" for v in values)
        print(f"{label:<14}{cells}")
    failures = {e: result["estimators"][e]["failures"] for e in ests}
    if any(failures.values()):
        print(f"failures: {failures}")
    if result["failure_warning"]:
        print("warning: replication failure rate above 0.1%")


if __name__ == "__main__":
    sys.exit(main())
