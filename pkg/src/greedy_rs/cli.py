"""Command-line interface: ``greedy-rs {bounds,tp,run,parallel,experiment}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys

import numpy as np

from . import analytics
from .core import derive_stream
from .harness import (
    CSV_COLUMNS,
    ExperimentConfig,
    _fmt,
    aggregate_diagnostics,
    binomial_se,
    emit_csv,
    make_runner,
    parse_problem,
    procedure_label,
    run_experiment,
)
from .problems import flowline_means, good_set, table_row


def _bounds(args) -> int:
    ctl = analytics.SeriesControl(tail_tol=args.tail_tol, root_tol=args.root_tol)
    if args.n0 > 1 or args.ng is not None:
        if args.ng is None:
            raise SystemExit("--ng is required with --n0 > 1")
        rep = analytics.efg_bound_params(args.gamma, args.sigma_bar, args.n0, args.ng,
                                         reps=args.reps, seed=args.seed, ctl=ctl)
    else:
        if args.c is None:
            raise SystemExit("--c is required for greedy bounds")
        sigma1 = args.sigma1 if args.sigma1 is not None else args.sigma_bar
        rep = analytics.greedy_pcs_bounds(args.gamma, args.sigma_bar, sigma1, args.c, ctl)
    print(json.dumps(rep.to_dict()))
    return 0


def _tp(args) -> int:
    designs, means = flowline_means(args.s1, args.s2)
    if args.action == "check":
        row = table_row(args.s1, args.s2, args.delta)
        print("k,highest_mean,gamma,n_best,n_good")
        print(f"{row['k']},{row['highest_mean']:.4f},{row['gamma']:.4f},{row['n_best']},{row['n_good']}")
        return 0
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        if args.action == "enumerate":
            print(len(designs))
        w = csv.writer(out)
        head = ["x1", "x2", "x3", "b2", "b3"] + (["mean"] if args.action == "means" else [])
        w.writerow(head)
        for d, m in zip(designs, means):
            w.writerow(list(d.as_tuple()) + ([repr(float(m))] if args.action == "means" else []))
    finally:
        if args.out:
            out.close()
    return 0


def _problem_spec(text: str):
    if text.startswith("tp:"):
        return text
    return {"kind": text}


def _procedure(args) -> dict:
    proc = {"name": args.procedure}
    for key, val in (("p", args.p), ("n0", args.n0), ("n_sd", args.nsd), ("G", args.G)):
        if val is not None:
            proc[key] = val
    if getattr(args, "q", None) is not None:
        proc.update(q=args.q, z=args.z, mode=args.mode, service=args.service_time)
    return proc


def _budget_c(args) -> float:
    if args.ng is None:
        return args.budget_c
    parts = (args.nsd or 0) + (args.n0 or 0) + args.ng
    return float(parts)


def _run(args) -> int:
    cfg = ExperimentConfig(
        problem=_problem_spec(args.config),
        procedure=_procedure(args),
        k_grid=[args.k] if args.k else [],
        c_grid=[_budget_c(args)],
        reps=args.reps,
        delta=args.delta,
        master_seed=args.seed,
        output=None,
    )
    rows = run_experiment(cfg)
    w = csv.writer(sys.stdout)
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return 1 if any(r.error for r in rows) else 0


def _parallel(args) -> int:
    instance = parse_problem(_problem_spec(args.config), args.k)
    k = instance.k
    B = int(round(_budget_c(args) * k))
    proc = _procedure(args)
    best = np.zeros(k, dtype=bool)
    best[list(instance.best_set)] = True
    hits, results, util, walls, sims = [], [], {"seed": [], "explore": [], "greedy": []}, [], []
    try:
        runner = make_runner(proc, instance, B, args.seed)
        for rep in range(args.reps):
            res = runner(derive_stream(args.seed, (0, rep)))
            hits.append(best[res.selected])
            report = res.extra["utilization"]
            for name in util:
                if name in report.phases:
                    util[name].append(report.phases[name].utilization)
            walls.append(report.wall_clock * 1000.0)
            sims.append(report.total_sim_time * 1000.0)
            res.final_state = None
            results.append(res)
    except (ValueError, IndexError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    pcs = float(np.mean(hits))
    cols = list(CSV_COLUMNS) + ["q", "z", "mode", "utilization_seed", "utilization_explore",
                                "utilization_greedy", "wall_ms", "sim_ms"]
    rec = {
        "config": args.config, "k": k, "B": B, "procedure": procedure_label(proc), "reps": args.reps,
        "pcs": pcs, "pcs_se": binomial_se(pcs, args.reps),
        "mean_wall_ms": float(np.mean([r.wall_time for r in results]) * 1000.0),
        "q": args.q, "z": args.z, "mode": args.mode,
        "wall_ms": float(np.mean(walls)), "sim_ms": float(np.mean(sims)),
    }
    if args.delta is not None:
        good = np.zeros(k, dtype=bool)
        good[list(good_set(instance, args.delta).indices)] = True
        pgs = float(np.mean([good[r.selected] for r in results]))
        rec["pgs"], rec["pgs_se"] = pgs, binomial_se(pgs, args.reps)
    rec.update(aggregate_diagnostics(results, instance))
    for name, vals in util.items():
        vals = [v for v in vals if not math.isnan(v)]
        rec[f"utilization_{name}"] = float(np.mean(vals)) if vals else None
    w = csv.writer(sys.stdout)
    w.writerow(cols)
    w.writerow([_fmt(rec.get(c)) for c in cols])
    return 0


def _experiment(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    rows = run_experiment(cfg, progress=True)
    good = [r for r in rows if r.error is None]
    if good:
        emit_csv(good, args.out or cfg.output or "results.csv")
    for r in rows:
        if r.error:
            print(f"error at k={r.k} B={r.B} {r.procedure}: {r.error}", file=sys.stderr)
    return 1 if len(good) < len(rows) else 0


def _add_run_flags(p: argparse.ArgumentParser, procedures) -> None:
    p.add_argument("--procedure", required=True, choices=procedures)
    p.add_argument("--config", required=True, help="configuration kind (e.g. SC-CV) or tp:S1,S2")
    p.add_argument("--k", type=int, help="number of alternatives (synthetic configurations)")
    p.add_argument("--budget-c", type=float, default=100.0, help="budget per alternative, B = c k")
    p.add_argument("--p", type=float, help="exploration share for efg")
    p.add_argument("--n0", type=int, help="exploration size per alternative")
    p.add_argument("--nsd", type=int, help="seeding size per alternative")
    p.add_argument("--ng", type=int, help="greedy budget per alternative; sets c = nsd + n0 + ng")
    p.add_argument("--G", type=int, help="number of exploration groups")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--delta", type=float, help="indifference parameter for PGS")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="greedy-rs", description="Greedy fixed-budget selection procedures")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bounds", help="analytic PCS bounds as one JSON line")
    b.add_argument("--gamma", type=float, required=True)
    b.add_argument("--sigma-bar", type=float, required=True)
    b.add_argument("--sigma1", type=float)
    b.add_argument("--c", type=float)
    b.add_argument("--n0", type=int, default=1)
    b.add_argument("--ng", type=int)
    b.add_argument("--tail-tol", type=float, default=1e-12)
    b.add_argument("--root-tol", type=float, default=1e-12)
    b.add_argument("--reps", type=int, default=50000)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=_bounds)

    t = sub.add_parser("tp", help="flow-line designs and exact means")
    t.add_argument("action", choices=("enumerate", "means", "check"))
    t.add_argument("--s1", type=int, required=True)
    t.add_argument("--s2", type=int, required=True)
    t.add_argument("--out")
    t.add_argument("--delta", type=float, default=0.01)
    t.set_defaults(func=_tp)

    r = sub.add_parser("run", help="estimate PCS/PGS of one procedure")
    _add_run_flags(r, ("greedy", "efg", "efg+", "ea", "sh", "msh"))
    r.set_defaults(func=_run)

    p = sub.add_parser("parallel", help="master-worker EFG+ with utilization accounting")
    _add_run_flags(p, ("efg++", "asyn-efg++"))
    p.add_argument("--q", type=int, default=4)
    p.add_argument("--z", type=int, default=1)
    p.add_argument("--mode", choices=("sim", "real"), default="sim")
    p.add_argument("--service-time", default="const:1", help="const:<ms> or uniform:<lo>,<hi>")
    p.set_defaults(func=_parallel)

    e = sub.add_parser("experiment", help="run a JSON-configured sweep")
    e.add_argument("--config", required=True, help="path to the JSON config")
    e.add_argument("--out")
    e.set_defaults(func=_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
