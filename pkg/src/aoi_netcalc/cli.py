"""Command-line front end: ``aoi-netcalc {bound,simulate,compare} --scenario FILE``.

Exit codes: 0 success, 1 usage or scenario parse error, 2 infeasible scenario (including a
policy with no analytical bound), 3 dominance violation found by ``compare``.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import scenario as scn
from .bounds import SweepRow, evaluate_point, evaluate_point_enumerated
from .errors import AoiError, InfeasibleError, InsufficientDataError, ScenarioError, SimulationOnlyError
from .sim import AgeTrace, age_statistics, simulate_records, warmup_threshold

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_DOMINANCE = 0, 1, 2, 3

BOUND_COLUMNS = ["w", "age_bound_quantile", "delay_bound_quantile", "theta_A", "theta_S", "theta_T", "stable"]
SIM_COLUMNS = ["w", "age_q_eps", "peak_age_q_eps", "delay_q_eps", "mean_age", "n_packets", "seed"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if not math.isfinite(v) else repr(v)
    return str(v)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in header])
    text = buf.getvalue()
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _map(fn, args, jobs):
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, args))
    return [fn(a) for a in args]


# --------------------------------------------------------------------------- rows


def _bound_row(args):
    sc, w, eps, scale = args
    if sc.enumerate_weights:
        r = evaluate_point_enumerated(sc.system, w, eps, bound_scale=scale)
    else:
        r = evaluate_point(sc.system, w, eps, bound_scale=scale)
    return r


def _bound_dict(r: SweepRow, enumerate_weights):
    d = {
        "w": r.w,
        "age_bound_quantile": r.age_quantile if r.stable else None,
        "delay_bound_quantile": r.delay_quantile if r.stable else None,
        "theta_A": r.theta_a,
        "theta_S": r.theta_s,
        "theta_T": r.theta_t,
        "stable": bool(r.stable),
    }
    if enumerate_weights:
        d["best_weight"] = r.weight
    return d


def _sim_row(args):
    """Simulate one sweep point; returns the CSV dict plus the age trace tail at ``probe_x``."""
    sc, w, eps, weight, probe_x = args
    system = sc.system.with_interval(w)
    if weight is not None and math.isfinite(weight):
        system = system.with_weights((weight, 1.0 - weight))
    d = {"w": float(w), "n_packets": sc.sim.n_packets, "seed": sc.sim.seed}
    rec = simulate_records(system, sc.sim.n_packets, sc.sim.seed, sc.sim.strict_slots)
    try:
        res = age_statistics(rec, (eps,), sc.sim.warmup_fraction, sc.sim.seed)
    except InsufficientDataError as exc:
        d["error"] = str(exc)
        return d
    d.update(
        age_q_eps=res.age_quantiles[eps],
        peak_age_q_eps=res.peak_age_quantiles[eps],
        delay_q_eps=res.delay_quantiles[eps],
        mean_age=res.mean_age,
        samples_used=res.samples_used,
    )
    if probe_x is not None and math.isfinite(probe_x):
        trace = AgeTrace(rec.t_arrival, rec.t_departure, warmup_threshold(rec.t_arrival, sc.sim.warmup_fraction))
        d["sim_ccdf_at_bound"] = float(trace.ccdf(probe_x))
    return d


# --------------------------------------------------------------------------- commands


def cmd_bound(sc, args):
    sc.system.check_analytical()
    eps = sc.bound_eps
    rows = _map(_bound_row, [(sc, float(w), eps, args.bound_scale) for w in sc.sweep.grid()], args.jobs)
    header = BOUND_COLUMNS + (["best_weight"] if sc.enumerate_weights else [])
    _write_csv(args.out, header, [_bound_dict(r, sc.enumerate_weights) for r in rows])
    return EXIT_OK


def _enumerated_weights(sc, eps, jobs):
    if not sc.enumerate_weights:
        return [None] * sc.sweep.n_points
    rows = _map(_bound_row, [(sc, float(w), eps, 1.0) for w in sc.sweep.grid()], jobs)
    return [r.weight for r in rows]


def cmd_simulate(sc, args):
    eps = sc.sim_eps
    weights = _enumerated_weights(sc, scn.BOUND_EPS_DEFAULT if sc.epsilon is None else sc.epsilon, args.jobs)
    rows = _map(_sim_row, [(sc, float(w), eps, p, None) for w, p in zip(sc.sweep.grid(), weights)], args.jobs)
    _write_csv(args.out, SIM_COLUMNS, rows)
    return EXIT_OK


def dominance_slack(eps, n):
    """Absolute probability slack ``eps * 2 / sqrt(eps * n)`` for an empirical tail from ``n`` samples."""
    return 2.0 * math.sqrt(eps / n)


def cmd_compare(sc, args):
    sc.system.check_analytical()
    eps = sc.sim_eps if args.eps is None else args.eps
    grid = [float(w) for w in sc.sweep.grid()]
    bounds = _map(_bound_row, [(sc, w, eps, args.bound_scale) for w in grid], args.jobs)
    sims = _map(
        _sim_row,
        [(sc, w, eps, b.weight if sc.enumerate_weights else None, b.age_quantile if b.stable else None)
         for w, b in zip(grid, bounds)],
        args.jobs,
    )
    header = BOUND_COLUMNS + (["best_weight"] if sc.enumerate_weights else []) + SIM_COLUMNS[1:] + ["dominance"]
    out, violated = [], False
    for b, s in zip(bounds, sims):
        d = _bound_dict(b, sc.enumerate_weights)
        d.update({k: v for k, v in s.items() if k in SIM_COLUMNS})
        if b.stable and "age_q_eps" in s:
            d["dominance"] = s["age_q_eps"] <= b.age_quantile
            tail = s.get("sim_ccdf_at_bound", math.nan)
            if tail > eps + dominance_slack(eps, s["samples_used"]):
                violated = True
        out.append(d)
    _write_csv(args.out, header, out)
    return EXIT_DOMINANCE if violated else EXIT_OK


# --------------------------------------------------------------------------- entry point


def _jobs_default():
    v = os.environ.get("AOI_NETCALC_JOBS")
    if v is None:
        return 1
    try:
        return max(1, int(v))
    except ValueError:
        return 1


def build_parser():
    p = argparse.ArgumentParser(prog="aoi-netcalc", description="Age-of-information tail bounds and simulation sweeps.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "bound": "analytical age and delay bound quantiles over the sweep",
        "simulate": "simulated age, peak-age and delay quantiles over the sweep",
        "compare": "bounds and simulation side by side with a dominance check",
    }
    for name, text in helps.items():
        c = sub.add_parser(name, help=text)
        c.add_argument("--scenario", required=True, metavar="PATH", help="JSON scenario file")
        c.add_argument("--out", metavar="PATH", help="write CSV here instead of standard output")
        c.add_argument("--eps", type=float, help="quantile level (defaults: 1e-6 for bounds, 1e-3 otherwise)")
        c.add_argument("--seed", type=int, help="simulation seed (unsigned 64-bit)")
        c.add_argument("--packets", type=int, help="simulated packets per sweep point")
        c.add_argument("--jobs", type=int, default=None, help="worker processes (env AOI_NETCALC_JOBS)")
        c.add_argument("--dump-config", action="store_true", help="print the effective scenario as JSON and exit")
        c.add_argument("--bound-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.jobs is None:
        args.jobs = _jobs_default()
    if args.eps is not None and not (0.0 < args.eps < 1.0):
        print("error: --eps must lie in (0, 1)", file=sys.stderr)
        return EXIT_USAGE
    try:
        sc = scn.load(args.scenario)
        bound_eps = args.eps if args.command == "bound" else None
        sim_eps = args.eps if args.command in ("simulate", "compare") else None
        sc = scn.with_overrides(sc, eps=bound_eps, seed=args.seed, packets=args.packets, sim_eps=sim_eps)
        scn.scenario_from_dict(scn.scenario_to_dict(sc))  # validates overrides
        if args.dump_config:
            text = scn.dumps(sc)
            if args.out:
                with open(args.out, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        cmd = {"bound": cmd_bound, "simulate": cmd_simulate, "compare": cmd_compare}[args.command]
        return cmd(sc, args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimulationOnlyError as exc:
        print(f"error: simulation-only policy, no analytical bound: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InfeasibleError as exc:
        print(f"error: infeasible scenario: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except AoiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
