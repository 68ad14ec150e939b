"""Command-line entry point: ``lbsim run|solve|oracle|graph``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import limits, oracles
from . import topology as topo
from .config import ConfigError, ExperimentConfig, load_config
from .engine import SimConfig, run as run_sim
from .stats import mean_ci

CSV_COLUMNS = ["policy", "N", "lambda", "d", "metric", "value", "ci_half", "seed",
               "config_hash", "replication"]


@dataclass(frozen=True)
class Cell:
    policy_index: int
    N: int
    replication: int


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def run_cell(cfg: ExperimentConfig, cell: Cell) -> tuple[Cell, list[list]]:
    entry = cfg.policies[cell.policy_index]
    N = cell.N
    seed = cfg.cell_seed(N, cell.replication)
    lam = cfg.load.arrival_rate(N)
    sim_cfg = SimConfig(
        n_stations=N, arrival_rate=lam, policy=cfg.build_policy(entry, N), horizon=cfg.horizon,
        warmup=cfg.warmup, seed=seed, dynamics=cfg.dynamics,
        topology=cfg.build_topology(N, seed), dispatchers=cfg.dispatchers,
        n_batches=cfg.n_batches)
    summary = run_sim(sim_cfg)
    d = cfg.d_for(entry, N)
    chash = cfg.hash()
    rows = []
    for metric, (value, half) in summary.metrics().items():
        rows.append([entry.label, N, lam, "" if d is None else d, metric, value, half, seed,
                     chash, cell.replication])
    return cell, rows


def _run_cell_args(args):
    return run_cell(*args)


def run_experiment(cfg: ExperimentConfig, out_dir: Path, threads: int = 1,
                   log=None) -> tuple[Path, Path]:
    cells = [Cell(p, N, r) for p in range(len(cfg.policies)) for N in cfg.n_list
             for r in range(cfg.replications)]
    results: list[tuple[Cell, list[list]]] = []
    if threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            for res in ex.map(_run_cell_args, [(cfg, c) for c in cells]):
                results.append(res)
                if log:
                    log(res[0])
    else:
        for c in cells:
            results.append(run_cell(cfg, c))
            if log:
                log(c)
    # deterministic order regardless of scheduling
    results.sort(key=lambda cr: (cr[0].N, cr[0].replication, cr[0].policy_index))
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.csv"
    with results_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for _, rows in results:
            for row in rows:
                w.writerow([_fmt(x) for x in row])

    summary_path = out_dir / "summary.csv"
    with summary_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for p, entry in enumerate(cfg.policies):
            for N in cfg.n_list:
                group = [rows for c, rows in results if c.policy_index == p and c.N == N]
                per_metric: dict[str, list[float]] = {}
                for rows in group:
                    for row in rows:
                        per_metric.setdefault(row[4], []).append(row[5])
                first = group[0][0]
                for metric, vals in per_metric.items():
                    vals = vals + [0.0] * (len(group) - len(vals))
                    est = _mean_ci(vals)
                    w.writerow([_fmt(x) for x in [entry.label, N, first[2], first[3], metric,
                                                  est[0], est[1], cfg.seed, cfg.hash(), "all"]])
    meta = {
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config_source": cfg.source,
        "config_hash": cfg.hash(),
        "cells": len(cells),
        "threads": threads,
        "columns": CSV_COLUMNS,
        "lambda_column": "aggregate arrival rate lambda(N)",
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return results_path, summary_path


def _mean_ci(vals):
    e = mean_ci(vals)
    return e.value, e.ci_half


# ---------------------------------------------------------------- argument parsing

def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lbsim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--out", help="output directory (default: config 'output' or ./results)")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--quiet", action="store_true")

    s = sub.add_parser("solve", help="limit solvers")
    ssub = s.add_subparsers(dest="solver", required=True)

    f = ssub.add_parser("fluid", help="integrate a fluid ODE, CSV trajectory")
    f.add_argument("family", choices=["jsqd", "jsq", "pool"])
    f.add_argument("--lambda", dest="lam", type=float, required=True)
    f.add_argument("--d", type=int, default=2)
    f.add_argument("--B", type=int)
    f.add_argument("--t", type=float, default=50.0)
    f.add_argument("--step", type=float, default=0.01)
    f.add_argument("--imax", type=int)
    f.add_argument("--samples", type=int, default=11, help="number of equally spaced output times")
    f.add_argument("--q0", type=_floats, help="start state (default all zero)")
    f.add_argument("--out")

    fp = ssub.add_parser("fixed-point", help="closed-form fixed point, CSV i,q_i")
    fp.add_argument("family", choices=["jsqd", "jsq", "pool"])
    fp.add_argument("--lambda", dest="lam", type=float, required=True)
    fp.add_argument("--d", type=int, default=2)
    fp.add_argument("--B", type=int)
    fp.add_argument("--imax", type=int)
    fp.add_argument("--out")

    df = ssub.add_parser("diffusion", help="simulate a diffusion limit, CSV path")
    df.add_argument("family", choices=["jsq", "pool-ou", "pool-reflected", "heavy-traffic"])
    df.add_argument("--beta", type=float, default=1.0)
    df.add_argument("--lambda", dest="lam", type=float)
    df.add_argument("--K", type=int)
    df.add_argument("--d", type=int, default=2)
    df.add_argument("--t", type=float, default=10.0)
    df.add_argument("--step", type=float, default=1e-3)
    df.add_argument("--q0", type=_floats)
    df.add_argument("--imax", type=int, default=5)
    df.add_argument("--every", type=int, default=100, help="keep every k-th step")
    df.add_argument("--seed", type=int, default=0)
    df.add_argument("--out")

    so = ssub.add_parser("oracle", help="same as the top-level oracle command")
    _add_oracle_args(so)

    o = sub.add_parser("oracle", help="closed-form results as JSON")
    _add_oracle_args(o)

    g = sub.add_parser("graph", help="topology diagnostics as JSON")
    g.add_argument("kind", choices=["clique", "ring", "edgeless", "er", "file"])
    g.add_argument("--n", type=int)
    g.add_argument("--p", type=float)
    g.add_argument("--path")
    g.add_argument("--eps", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--exact", choices=["auto", "yes", "no"], default="auto")
    return ap


def _add_oracle_args(p):
    osub = p.add_subparsers(dest="oracle", required=True)
    m = osub.add_parser("mm1")
    m.add_argument("--rho", type=float, required=True)
    m.add_argument("--imax", type=int, default=10)
    e = osub.add_parser("erlang-c")
    e.add_argument("--N", type=int, required=True)
    e.add_argument("--lambda", dest="lam", type=float, required=True)
    for name in ("blocking", "queueing", "enhancement-b"):
        b = osub.add_parser(name)
        b.add_argument("--R", type=int, required=True)
        b.add_argument("--alpha", type=_floats, required=True)
        b.add_argument("--lambda", dest="lam", type=float, required=True)
    q = osub.add_parser("maxq")
    q.add_argument("--N", type=int, required=True)
    q.add_argument("--d", type=int, required=True)
    q.add_argument("--lambda", dest="lam", type=float)


# ---------------------------------------------------------------- commands

def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.raw = dict(cfg.raw, seed=args.seed)
    out = Path(args.out or cfg.output or "results")
    total = len(cfg.policies) * len(cfg.n_list) * cfg.replications
    done = [0]

    def log(cell):
        done[0] += 1
        if not args.quiet:
            print(f"[{done[0]}/{total}] {cfg.policies[cell.policy_index].label} "
                  f"N={cell.N} rep={cell.replication}", file=sys.stderr)
    res, summ = run_experiment(cfg, out, max(1, args.threads), log)
    print(f"wrote {res} and {summ}")
    return 0


def _fluid_setup(args):
    lam = args.lam
    if args.family == "jsqd":
        imax = args.imax or limits.default_imax_jsqd(lam, args.d)
        return (lambda q: limits.fluid_rhs_jsqd(q, lam, args.d)), imax, \
            (lambda: limits.fixed_point_jsqd(lam, args.d, imax))
    if args.family == "jsq":
        imax = args.imax or 6
        return (lambda q: limits.fluid_rhs_jsq(q, lam)), imax, \
            (lambda: limits.fixed_point_jsq(lam, imax))
    imax = args.imax or (args.B if args.B else limits.pool_split(lam)[0] + 6)
    return (lambda q: limits.fluid_rhs_jsq_pool(q, lam, args.B)), imax, \
        (lambda: limits.fixed_point_pool(lam, args.B, imax))


def cmd_solve(args) -> int:
    if args.solver == "oracle":
        return cmd_oracle(args)
    if args.solver == "fixed-point":
        if args.family == "jsqd":
            q = limits.fixed_point_jsqd(args.lam, args.d, args.imax)
        elif args.family == "jsq":
            q = limits.fixed_point_jsq(args.lam, args.imax or 6)
        else:
            q = limits.fixed_point_pool(args.lam, args.B, args.imax)
        buf = io.StringIO()
        buf.write("i,q\n")
        for i, v in enumerate(q, start=1):
            buf.write(f"{i},{float(v)!r}\n")
        _emit(buf.getvalue(), args.out)
        return 0
    if args.solver == "fluid":
        rhs, imax, _ = _fluid_setup(args)
        q0 = np.zeros(imax) if args.q0 is None else np.asarray(args.q0, dtype=float)
        if not limits.is_fluid_state(q0):
            raise ValueError("q0 must be non-increasing within [0, 1]")
        times = np.linspace(0.0, args.t, max(2, args.samples))
        traj = limits.integrate_fluid(rhs, q0, args.t, args.step, times)
        _emit(traj.to_csv("q"), args.out)
        return 0
    # diffusion
    rng = np.random.default_rng(args.seed)
    fam = args.family
    if fam == "jsq":
        q0 = np.zeros(args.imax) if args.q0 is None else np.asarray(args.q0, float)
        traj = limits.simulate_diffusion_jsq(args.beta, q0, args.t, args.step, rng,
                                             sample_every=args.every)
    elif fam == "pool-ou":
        if args.lam is None:
            raise ValueError("pool-ou needs --lambda")
        traj = limits.simulate_diffusion_pool(args.lam, case="f>0", t_end=args.t, step=args.step,
                                              rng=rng, start=args.q0[0] if args.q0 else None,
                                              sample_every=args.every)
    elif fam == "pool-reflected":
        traj = limits.simulate_diffusion_pool(args.lam, case="f=0", K=args.K, t_end=args.t,
                                              step=args.step, rng=rng, beta=args.beta,
                                              start=args.q0, sample_every=args.every)
    else:
        q0 = np.zeros(args.imax) if args.q0 is None else np.asarray(args.q0, float)
        times = np.linspace(0.0, args.t, 11)
        traj = limits.heavy_traffic_jsqd_ode(q0, args.d, args.t, args.step, times)
    _emit(traj.to_csv("qbar"), args.out)
    return 0


def cmd_oracle(args) -> int:
    o = args.oracle
    if o == "mm1":
        res = oracles.mm1_metrics(args.rho, args.imax).to_dict()
    elif o == "erlang-c":
        res = oracles.erlang_c(args.N, args.lam).to_dict()
    elif o == "blocking":
        res = oracles.blocking_limit(args.R, args.lam, args.alpha).to_dict()
    elif o == "queueing":
        res = oracles.queueing_limit(args.R, args.lam, args.alpha).to_dict()
    elif o == "enhancement-b":
        res = {"nu_threshold": oracles.enhancement_b_threshold(args.R, args.lam, args.alpha)}
    else:
        res = oracles.maxq_prediction(args.N, args.d, args.lam).to_dict()
    print(json.dumps(res, sort_keys=True))
    return 0


def cmd_graph(args) -> int:
    if args.kind == "file":
        if not args.path:
            raise ValueError("graph file needs --path")
        g = topo.load_edge_list(args.path, args.n)
    else:
        if args.n is None:
            raise ValueError(f"graph {args.kind} needs --n")
        if args.kind == "clique":
            g = topo.make_clique(args.n)
        elif args.kind == "ring":
            g = topo.make_ring(args.n)
        elif args.kind == "edgeless":
            g = topo.make_edgeless(args.n)
        else:
            if args.p is None:
                raise ValueError("graph er needs --p")
            g = topo.make_er(args.n, args.p, np.random.default_rng(args.seed))
    exact = {"auto": None, "yes": True, "no": False}[args.exact]
    rng = np.random.default_rng(args.seed)
    d1 = topo.dis1(g, args.eps, exact=exact, rng=rng)
    d2 = topo.dis2(g, args.eps, exact=exact, rng=rng)
    res = {
        "n": g.n, "edges": g.n_edges, "kind": g.kind,
        "degree": topo.min_degree_check(g).to_dict(),
        "eps": args.eps,
        "dis1": {"value": d1.value, "exact": d1.exact, "min_size": d1.min_size},
        "dis2": {"value": d2.value, "exact": d2.exact, "min_size": d2.min_size},
    }
    print(json.dumps(res, sort_keys=True))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "solve":
            return cmd_solve(args)
        if args.command == "oracle":
            return cmd_oracle(args)
        return cmd_graph(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
