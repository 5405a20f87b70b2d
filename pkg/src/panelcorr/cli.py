"""Command-line front end.

Subcommands: ``estimate``, ``test``, ``simulate``, ``diagnose``, ``tau-sweep``.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.  Errors
are written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from .exceptions import ConfigError, PanelCorrError
from .inference import maximize_objective, test_all
from .io import ColumnRoles, ingest, parse_constraint
from .model import IndexModel, ModelSpec, theta_names
from .objectives import make_objective
from .profiler import sanitize_panel

logger = logging.getLogger("panelcorr")

SPEC_KEYS = ("family", "index_form", "lag_order", "identification", "tau",
             "strictly_exogenous", "clamp")
ROLE_KEYS = ("unit", "time", "outcome", "x", "u", "v")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _fmt(x):
    return format(float(x), ".17g")


def _csv_list(text, cast=str):
    return [cast(s.strip()) for s in str(text).split(",") if s.strip()]


def _load_config(path):
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith(".json"):
        cfg = json.loads(text)
    else:
        import yaml
        cfg = yaml.safe_load(text)
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return cfg


def _merged(args, cfg):
    """Command-line values override the config file."""
    out = dict(cfg.get("model", {}))
    out.update({k: v for k, v in cfg.get("columns", {}).items()})
    for k, v in cfg.items():
        if k not in ("model", "columns") and not isinstance(v, dict):
            out.setdefault(k, v)
    for k, v in vars(args).items():
        if v is not None and k not in ("command", "func"):
            out[k] = v
    return out


def _model_from(opts):
    spec_kw = {k: opts[k] for k in SPEC_KEYS if k in opts and opts[k] is not None}
    if "tau" in spec_kw and isinstance(spec_kw["tau"], (list, str)):
        spec_kw["tau"] = _csv_list(spec_kw["tau"], int)[0]
    spec = ModelSpec(**spec_kw)
    x = opts.get("x", [])
    if isinstance(x, str):
        x = _csv_list(x)
    roles = ColumnRoles(unit=opts.get("unit", "unit"), time=opts.get("time", "time"),
                        outcome=opts.get("outcome", "y"), x=list(x),
                        u=opts.get("u"), v=opts.get("v"), lag_order=spec.lag_order)
    if not opts.get("data"):
        raise ConfigError("--data is required")
    data = ingest(opts["data"], roles)
    clean, report = sanitize_panel(data, spec)
    return spec, roles, clean, report


def _objectives(opts):
    obj = opts.get("objective", "both")
    if obj == "both":
        return ["raw", "corrected"]
    if obj not in ("raw", "corrected"):
        raise ConfigError(f"unknown objective {obj!r}")
    return [obj]


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=True)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _write_rows(header, rows, path):
    fh = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)
    finally:
        if path:
            fh.close()


def _outpath(opts, name):
    out = opts.get("out")
    if not out:
        return None
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, name)


def _sanitize_echo(report):
    return {"dropped_units": [str(u) for u in report.dropped_units],
            "dropped_periods": [str(t) for t in report.dropped_periods],
            "reasons": {f"{k[0]}:{k[1]}": v for k, v in report.reasons.items()}}


def _fit_all(spec, data, objectives):
    model = IndexModel(spec, data)
    start = np.zeros(model.p)
    fits = {}
    raw = maximize_objective(make_objective("raw", model), start)
    fits["raw"] = raw
    if "corrected" in objectives:
        from .inference import _neg_inv
        obj = make_objective("corrected", model)
        fits["corrected"] = maximize_objective(obj, raw.theta_hat,
                                               hinv0=_neg_inv(raw.hessian_theta))
    return model, fits


# -- subcommands ------------------------------------------------------------------

def cmd_estimate(opts):
    spec, roles, data, report = _model_from(opts)
    objectives = _objectives(opts)
    model, fits = _fit_all(spec, data, objectives)
    names = theta_names(spec, data)
    results = {}
    rows = []
    for kind in objectives:
        f = fits[kind]
        results[kind] = {
            "theta_hat": dict(zip(names, map(float, f.theta_hat))),
            "se": dict(zip(names, map(float, f.se))),
            "loglik": f.loglik, "converged": f.converged,
            "iterations": f.iterations, "score_inf_norm": float(np.max(np.abs(f.score))),
            "flags": f.flags}
        for j, n in enumerate(names):
            rows.append([kind, n, _fmt(f.theta_hat[j]), _fmt(f.se[j])])
    out = {"command": "estimate", "spec": asdict(spec), "n_units": data.n_units,
           "n_periods": data.n_periods, "sanitize": _sanitize_echo(report),
           "results": results, "config": _echo(opts)}
    _write_json(out, _outpath(opts, "estimate.json"))
    _write_rows(["objective", "parameter", "estimate", "se"], rows,
                _outpath(opts, "se.csv"))
    return 0


def _kinds(opts):
    kinds = []
    for k in _csv_list(opts.get("kinds", "lr,lm,wald")):
        k = k.upper()
        if k not in ("LR", "LM", "WALD"):
            raise ConfigError(f"unknown test kind {k!r}")
        kinds.append("Wald" if k == "WALD" else k)
    return kinds


def _constraints(opts, names):
    raw = opts.get("constraint")
    if not raw:
        raise ConfigError("at least one --constraint is required")
    if isinstance(raw, str):
        raw = [raw]
    return [parse_constraint(c, names) for c in raw]


def _test_rows(spec, data, constraints, objectives, kinds, fits=None):
    rows = []
    for con in constraints:
        shared = dict(fits or {})
        for obj in objectives:
            for res in test_all(data, spec, con, obj, kinds, fits=shared):
                rows.append({"constraint": con.description, "objective": obj,
                             "kind": res.kind, "statistic": res.statistic,
                             "df": res.df, "p_value": res.p_value,
                             "flags": ";".join(sorted(res.flags))})
    return rows


def cmd_test(opts):
    spec, roles, data, report = _model_from(opts)
    names = theta_names(spec, data)
    constraints = _constraints(opts, names)
    rows = _test_rows(spec, data, constraints, _objectives(opts), _kinds(opts))
    _write_rows(["constraint", "objective", "kind", "statistic", "df", "p_value", "flags"],
                [[r["constraint"], r["objective"], r["kind"], _fmt(r["statistic"]),
                  r["df"], _fmt(r["p_value"]), r["flags"]] for r in rows],
                _outpath(opts, "tests.csv"))
    if opts.get("out"):
        _write_json({"command": "test", "spec": asdict(spec), "tests": rows,
                     "sanitize": _sanitize_echo(report), "config": _echo(opts)},
                    _outpath(opts, "tests.json"))
    return 0


def cmd_tau_sweep(opts):
    taus = _csv_list(opts.get("tau_list") or opts.get("tau") or "0,1,2", int)
    opts = dict(opts)
    opts["tau"] = taus[0]
    spec, roles, data, report = _model_from(opts)
    names = theta_names(spec, data)
    constraints = _constraints(opts, names) if opts.get("constraint") else []
    kinds = _kinds(opts)
    rows = []
    for tau in taus:
        s = spec.with_tau(tau)
        model, fits = _fit_all(s, data, ["corrected"])
        f = fits["corrected"]
        base = [tau, _fmt(f.loglik)] + [_fmt(v) for v in f.theta_hat]
        tests = _test_rows(s, data, constraints, ["corrected"], kinds,
                           fits=fits) if constraints else []
        if not tests:
            rows.append(base + ["", "", "", "", ""])
        for t in tests:
            rows.append(base + [t["constraint"], t["kind"], _fmt(t["statistic"]),
                                t["df"], _fmt(t["p_value"])])
    header = (["tau", "loglik_tilde"] + [f"theta_{n}" for n in names]
              + ["constraint", "kind", "statistic", "df", "p_value"])
    _write_rows(header, rows, _outpath(opts, "tau_sweep.csv"))
    return 0


def cmd_simulate(opts):
    from .simulate import DEFAULT_DELTAS, DgpDesign, MCConfig, monte_carlo, write_report

    design = DgpDesign.from_name(opts.get("design", "logit-ds-dynamic"),
                                 N=int(opts.get("n", 56)), T=int(opts.get("t", 14)))
    deltas = (_csv_list(opts["deltas"], float) if opts.get("deltas")
              else DEFAULT_DELTAS)
    objectives = (["infeasible", "raw", "corrected"] if opts.get("objective", "all")
                  in ("all", None) else
                  (["raw", "corrected"] if opts["objective"] == "both"
                   else _csv_list(opts["objective"])))
    tau = opts.get("tau", 1)
    if isinstance(tau, str):
        tau = _csv_list(tau, int)[0]
    cfg = MCConfig(design=design, replications=int(opts.get("reps", 1000)),
                   delta_grid=tuple(deltas), tau=int(tau),
                   kinds=tuple(_kinds({"kinds": opts.get("kinds", "lr")})),
                   objectives=tuple(objectives), master_seed=int(opts.get("seed", 0)),
                   threads=int(opts.get("threads", 1)))
    if not opts.get("out"):
        raise ConfigError("--out is required for simulate")
    report = monte_carlo(cfg)
    paths = write_report(report, opts["out"])
    sys.stdout.write(json.dumps({"n_used": report.n_used,
                                 "n_excluded": report.n_excluded,
                                 "files": paths}, sort_keys=True) + "\n")
    return 0


def cmd_diagnose(opts):
    from .diagnostics import DEFAULT_GRID, schur_invariance_check, write_series
    from .simulate import DgpDesign

    design = DgpDesign.from_name(opts.get("design", "probit-ae-dynamic"))
    deltas = _csv_list(opts.get("deltas") or "-0.3,0,0.3", float)
    which = _csv_list(opts.get("which") or "A,B")
    grid = DEFAULT_GRID
    if opts.get("grid"):
        lo, hi, step = (int(v) for v in opts["grid"].split(":"))
        grid = tuple(range(lo, hi + 1, step))
    series = []
    for d in deltas:
        for w in which:
            series.append(schur_invariance_check(
                design, d, w.upper(), grid, seed=int(opts.get("seed", 0)),
                fixed_size=int(opts.get("fixed_size", 100)),
                threads=int(opts.get("threads", 1))))
    if not opts.get("out"):
        raise ConfigError("--out is required for diagnose")
    os.makedirs(opts["out"], exist_ok=True)
    write_series(series, os.path.join(opts["out"], "schur_table.csv"),
                 os.path.join(opts["out"], "schur_series.csv"))
    _write_json({"command": "diagnose", "config": _echo(opts),
                 "series": [asdict(s) for s in series]},
                os.path.join(opts["out"], "manifest.json"))
    return 0


def _echo(opts):
    return {k: v for k, v in sorted(opts.items()) if k != "func"}


# -- entry point -------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="panelcorr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    def model_args(sp):
        sp.add_argument("--data")
        sp.add_argument("--config")
        sp.add_argument("--out")
        sp.add_argument("--unit")
        sp.add_argument("--time")
        sp.add_argument("--outcome")
        sp.add_argument("--x", help="comma-separated covariate columns")
        sp.add_argument("--u")
        sp.add_argument("--v")
        sp.add_argument("--family")
        sp.add_argument("--index-form", dest="index_form")
        sp.add_argument("--lag-order", dest="lag_order", type=int)
        sp.add_argument("--identification")
        sp.add_argument("--tau")
        sp.add_argument("--objective", choices=["raw", "corrected", "both"])

    sp = sub.add_parser("estimate")
    model_args(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("test")
    model_args(sp)
    sp.add_argument("--constraint", action="append")
    sp.add_argument("--kinds")
    sp.set_defaults(func=cmd_test)

    sp = sub.add_parser("tau-sweep")
    model_args(sp)
    sp.add_argument("--tau-list", dest="tau_list")
    sp.add_argument("--constraint", action="append")
    sp.add_argument("--kinds")
    sp.set_defaults(func=cmd_tau_sweep)

    sp = sub.add_parser("simulate")
    sp.add_argument("--config")
    sp.add_argument("--design")
    sp.add_argument("--n", type=int)
    sp.add_argument("--t", type=int)
    sp.add_argument("--reps", type=int)
    sp.add_argument("--tau")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--kinds")
    sp.add_argument("--deltas")
    sp.add_argument("--objective", help="all, both, or a comma list")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("diagnose")
    sp.add_argument("--config")
    sp.add_argument("--design")
    sp.add_argument("--deltas")
    sp.add_argument("--which")
    sp.add_argument("--grid", help="start:stop:step")
    sp.add_argument("--fixed-size", dest="fixed_size", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_diagnose)
    return p


def _error(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("row", "column", "gaps"):
        val = getattr(exc, attr, None)
        if val is not None:
            payload[attr] = {str(k): v for k, v in val.items()} if isinstance(val, dict) else val
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise ConfigError("a subcommand is required: estimate, test, simulate, "
                              "diagnose, tau-sweep")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                            format="%(levelname)s %(name)s: %(message)s")
        opts = _merged(args, _load_config(getattr(args, "config", None)))
        opts.pop("verbose", None)
        return args.func(opts)
    except PanelCorrError as exc:
        return _error(exc, exc.exit_code)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        return _error(exc, 2)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _error(exc, 3)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
