"""
Batch front end.

    infxlap solve       --config problem.json --out DIR
    infxlap triple      --config problem.json --out DIR
    infxlap sandwich    --config problem.json --out DIR --eps 0.2,0.1,0.05
    infxlap harnack     --config problem.json --out DIR
    infxlap convergence --config problem.json --out DIR
    infxlap verify      --out DIR --seed 0

Exit status: 0 success, 2 usage or configuration error, 3 numerical failure
(reports are still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    ComparisonPreconditionError,
    caccioppoli_check,
    check_comparison,
    convergence_order,
    default_probes,
    fit_harnack_bound,
    harnack_check,
    lipschitz_bound_check,
    make_cutoff,
    sandwich_experiment,
)
from .config import ConfigError, apply_overrides, build_problem, config_hash, load_config, reference_function
from .exponent import family_from_dict, gaussian_family, exponent_from_family
from .gadgets import GFunctionParams, check_g_properties, monotonicity_gap_batch
from .grid import BoundaryData, atomic_write_text, diff_sup_norm, make_domain, write_csv, write_pgm
from .operator import full_operator_discrete
from .solvers import EnergyOverflowError, Problem, SolverError, Tolerances, solve_direct, solve_triple
from .solvers import solve_variational_limit

log = logging.getLogger("infxlap")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class _Numerical(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _clean(o):
    """Non-finite floats become strings so the JSON stays standard."""
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    return o


def write_json(path, obj):
    atomic_write_text(path, json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n")


def write_table(path, rows: list, columns: list):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else (f"{r[c]:.17g}" if isinstance(r[c], float) else r[c]) for c in columns])
    atomic_write_text(path, buf.getvalue())


def _provenance(args, cfg, problem: Problem = None) -> dict:
    out = {
        "command": args.command,
        "version": __version__,
        "seed": args.seed,
        "config_path": None if args.config is None else str(args.config),
        "config_hash": None if cfg is None else config_hash(cfg),
        "overrides": {"eps": args.eps, "kmax": args.kmax, "tol": args.tol, "scheme": args.scheme},
    }
    if problem is not None:
        out["scheme"] = problem.scheme
        out["stencil"] = problem.stencil
        out["tolerances"] = problem.tolerances.to_dict()
        out["k_schedule"] = list(problem.k_schedule)
    return out


def _parse_eps(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad epsilon list {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty epsilon list")
    return vals


def _load(args):
    if args.config is None:
        raise ConfigError(f"{args.command} needs --config")
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, eps=args.eps, kmax=args.kmax, tol=args.tol, scheme=args.scheme)
    cfg["_base"] = str(Path(args.config).resolve().parent)
    return cfg, build_problem(cfg)


def _solve(problem: Problem, cfg: dict):
    if cfg.get("solver", "direct") == "variational":
        return solve_variational_limit(problem, 0)
    return solve_direct(problem)


# ---------------------------------------------------------------- commands


def run_solve(args, out: Path) -> int:
    cfg, problem = _load(args)
    u, rep = _solve(problem, cfg)
    write_csv(u, out / "solution.csv")
    write_pgm(u, out / "solution.pgm")
    report = {"provenance": _provenance(args, cfg, problem), "problem": problem.describe(), "solve": rep.to_dict()}
    ref = reference_function(cfg, problem.domain)
    if ref is not None:
        m = problem.domain.active_mask
        report["reference_error"] = float(np.max(np.abs(u.values[m] - ref.values[m])))
    write_json(out / "report.json", report)
    from .plotting import plot_history, plot_solution

    plot_solution(u, out / "solution.png")
    hist = rep.history.get("residual") or rep.history.get("cauchy") or []
    plot_history(hist, out / "history.png")
    return EXIT_OK if rep.converged else EXIT_NUMERIC


def run_triple(args, out: Path) -> int:
    cfg, problem = _load(args)
    if args.eps:
        try:
            problem = problem.with_(epsilon=args.eps[0])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    um, h, up, reps = solve_triple(problem)
    for name, f in (("u_minus", um), ("h", h), ("u_plus", up)):
        write_csv(f, out / f"{name}.csv")
    write_csv(h, out / "solution.csv")
    write_pgm(h, out / "solution.pgm")
    m = problem.domain.interior_mask
    lower = max(0.0, float(np.max(um.values[m] - h.values[m]))) if m.any() else 0.0
    upper = max(0.0, float(np.max(h.values[m] - up.values[m]))) if m.any() else 0.0
    tol = 10.0 * problem.tolerances.step_tol
    report = {
        "provenance": _provenance(args, cfg, problem),
        "problem": problem.describe(),
        "diff_sup": diff_sup_norm(up, um),
        "lower_violation": lower,
        "upper_violation": upper,
        "ordering_tolerance": tol,
        "solves": {k: v.to_dict() for k, v in reps.items()},
    }
    write_json(out / "report.json", report)
    from .plotting import plot_triple

    plot_triple(um, h, up, out / "triple.png")
    ok = all(r.converged for r in reps.values()) and lower <= tol and upper <= tol
    return EXIT_OK if ok else EXIT_NUMERIC


def run_sandwich(args, out: Path) -> int:
    cfg, problem = _load(args)
    eps = cfg.get("epsilons")
    if eps is None:
        raise ConfigError("sandwich needs --eps or an 'epsilons' list in the problem file")
    try:
        rep = sandwich_experiment(problem, eps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_table(out / "sandwich.csv", rep.rows(), ["epsilon", "diff_sup", "lower_violation", "upper_violation", "kappa_fit"])
    write_json(out / "report.json", {"provenance": _provenance(args, cfg, problem), "problem": problem.describe(),
                                     "sandwich": rep.to_dict()})
    from .plotting import plot_loglog

    plot_loglog(rep.epsilons, {"sup |u+ - u-|": rep.diffs}, out / "sandwich.png", "epsilon", "sup |u+ - u-|")
    return EXIT_OK if rep.ordering_ok and not rep.errors else EXIT_NUMERIC


def run_harnack(args, out: Path) -> int:
    cfg, problem = _load(args)
    hc = cfg.get("harnack")
    if hc is None:
        raise ConfigError("harnack needs a 'harnack' block with center and radii")
    u, srep = _solve(problem, cfg)
    rows, reports = [], []
    for R in hc["radii"]:
        try:
            r = harnack_check(u, hc["center"], R, alpha=hc.get("alpha", 1.0))
        except ValueError as exc:
            if "nonnegative" in str(exc):
                raise _Numerical(str(exc)) from exc
            raise ConfigError(str(exc)) from exc
        reports.append(r.to_dict())
        rows.append(r.to_dict())
    bound = fit_harnack_bound([r["sup_B2R"] for r in rows], [r["ratio"] for r in rows])
    write_table(out / "harnack.csv", rows, ["R", "sup_BR", "inf_BR", "ratio", "sup_B2R", "C1", "C2", "feasible"])
    write_csv(u, out / "solution.csv")
    write_pgm(u, out / "solution.pgm")
    write_json(out / "report.json", {"provenance": _provenance(args, cfg, problem), "problem": problem.describe(),
                                     "solve": srep.to_dict(), "harnack": reports, "bound": bound})
    from .plotting import plot_harnack

    plot_harnack([r["sup_B2R"] for r in rows], [r["ratio"] for r in rows], out / "harnack.png", bound)
    ok = srep.converged and all(r["feasible"] for r in rows) and bound["finite"]
    return EXIT_OK if ok else EXIT_NUMERIC


def run_convergence(args, out: Path) -> int:
    cfg, problem = _load(args)
    block = cfg["exponent"]
    if "csv" in block:
        raise ConfigError("convergence needs a closed-form exponent family")
    fam = family_from_dict(block)
    hs = cfg.get("convergence", {}).get("h", [1 / 8, 1 / 16, 1 / 32, 1 / 64])
    rows, orders = [], {}
    try:
        for pr in default_probes():
            r = convergence_order(pr, fam, hs, scheme=problem.scheme, stencil=problem.stencil)
            orders[pr.name] = {"orders": r.orders, "exact": r.exact}
            for op, errs in r.errors.items():
                for h, e in zip(r.h_list, errs):
                    rows.append({"probe": pr.name, "operator": op, "h": h, "error": float(e)})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_table(out / "convergence.csv", rows, ["probe", "operator", "h", "error"])
    write_json(out / "report.json", {"provenance": _provenance(args, cfg, problem), "h": hs, "results": orders})
    from .plotting import plot_loglog

    series = {f"{r_['probe']}:{r_['operator']}": [] for r_ in rows}
    for r_ in rows:
        series[f"{r_['probe']}:{r_['operator']}"].append(r_["error"])
    plot_loglog(hs, series, out / "convergence.png", "h", "operator error")
    ok = all(
        v["exact"][op] or (v["orders"][op] is not None and v["orders"][op] >= 0.9)
        for v in orders.values() for op in v["orders"]
    )
    return EXIT_OK if ok else EXIT_NUMERIC


def _faulty_operator(u, node, field, guard=None, scheme="upwind-log", stencil="directional"):
    return full_operator_discrete(u, node, field, guard, scheme, stencil) + 0.25


def verify_suite(seed: int = 0, n_fuzz: int = 20000, operator=None) -> dict:
    """Property checks driven by one seed; returns a JSON-ready dict without timings."""
    rng = np.random.default_rng(seed)
    operator = full_operator_discrete if operator is None else operator
    checks = {}

    # elementary vector inequality
    dim = 3
    scale = 10.0 ** rng.uniform(-3, 3, size=(n_fuzz, 1))
    a = rng.normal(size=(n_fuzz, dim)) * scale
    b = rng.normal(size=(n_fuzz, dim)) * scale
    q = rng.uniform(2.0, 8.0, size=n_fuzz)
    gap = monotonicity_gap_batch(a, b, q)
    rel = gap / np.maximum(1.0, np.linalg.norm(b - a, axis=1) ** q)
    checks["inequality"] = {"cases": n_fuzz, "min_relative_gap": float(rel.min()), "ok": bool(rel.min() >= -1e-12)}

    # g-function
    gres = []
    for _ in range(5):
        prm = GFunctionParams(float(rng.uniform(0.5, 5.0)), float(rng.uniform(1.05, 1.95)))
        ts = np.concatenate([[0.0], rng.uniform(0.0, 5.0, 40)])
        gres.append(check_g_properties(prm, ts).to_dict())
    checks["g_function"] = {"runs": gres, "ok": all(r["ok"] for r in gres)}

    # operator consistency
    fam = gaussian_family(2.0, 1.0, (0.5, 0.5), 0.25)
    cons = {}
    for pr in default_probes():
        r = convergence_order(pr, fam, [1 / 8, 1 / 16, 1 / 32, 1 / 64], operator=operator)
        cons[pr.name] = r.orders["full"]
    checks["consistency"] = {"orders": cons, "ok": all(o is not None and o >= 0.9 for o in cons.values())}

    # comparison pairs and Caccioppoli on small direct solves
    d = make_domain(9, 9, 1 / 8)
    field = exponent_from_family(d, fam)
    comp, cacc = [], []
    for _ in range(3):
        c = rng.normal(size=3)
        base = BoundaryData.from_function(d, lambda x, y, c=c: 2.0 + c[0] * x + c[1] * y + 0.5 * c[2] * x * y)
        bump = BoundaryData(d, base.values + rng.uniform(0.0, 0.2, size=base.values.size))
        tol = Tolerances(residual_tol=1e-10)
        u, ru = solve_direct(Problem(d, base, field, tolerances=tol))
        v, rv = solve_direct(Problem(d, bump, field, tolerances=tol))
        try:
            cr = check_comparison(u, v, tol=1e-8)
            comp.append({**cr.to_dict(), "converged": ru.converged and rv.converged})
        except ComparisonPreconditionError as exc:
            comp.append({"ok": False, "error": str(exc)})
        if np.min(u.values[d.active_mask]) > 0:
            z = make_cutoff(d, (0.5, 0.5), 0.2)
            cacc.append(caccioppoli_check(u, z, field).to_dict())
    checks["comparison"] = {"pairs": comp, "ok": all(c["ok"] for c in comp)}
    checks["caccioppoli"] = {"cases": cacc, "ok": all(c["ok"] for c in cacc)}
    return {"seed": seed, "checks": checks, "ok": all(c["ok"] for c in checks.values())}


def run_verify(args, out: Path, operator=None) -> int:
    if getattr(args, "inject_fault", False):
        operator = _faulty_operator
    res = verify_suite(args.seed, operator=operator)
    res["provenance"] = _provenance(args, None)
    res["provenance"]["config_hash"] = config_hash({"seed": args.seed, "suite": "verify", "version": __version__})
    write_json(out / "report.json", res)
    rows = [{"check": k, "ok": str(v["ok"]).lower()} for k, v in res["checks"].items()]
    write_table(out / "verify.csv", rows, ["check", "ok"])
    return EXIT_OK if res["ok"] else EXIT_NUMERIC


COMMANDS = {
    "solve": run_solve,
    "triple": run_triple,
    "sandwich": run_sandwich,
    "harnack": run_harnack,
    "verify": run_verify,
    "convergence": run_convergence,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="infxlap", description="Variable-exponent infinity-Laplace solver and checks.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="problem JSON file")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=_parse_eps, help="comma-separated epsilon list")
    p.add_argument("--kmax", type=float, help="largest k * p_min in the default k schedule")
    p.add_argument("--tol", type=float, help="sets both residual and step tolerance")
    p.add_argument("--scheme", choices=["centered", "upwind-log"])
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.tol is not None and not args.tol > 0:
        print("error: --tol must be positive", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not os.access(out, os.W_OK):
        print(f"error: output directory {out} is not writable", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, EnergyOverflowError, FloatingPointError, _Numerical) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    log.info("%s finished in %.2fs with status %d", args.command, time.perf_counter() - t0, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
