"""Acceptance criteria, each at its stated tolerance with a fixed seed.

Simulation criteria run through the same config files and runner as the
CLI (configs live in tests/acceptance/). Every test records a PASS/FAIL
line that is printed in the terminal summary.
"""

import csv
import math
import time
from itertools import combinations
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from lbsim import limits, oracles
from lbsim import topology as tp
from lbsim.cli import run_experiment
from lbsim.config import load_config

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).parent / "acceptance"


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    """Run each acceptance config once per session; rows keyed by config name."""
    root = tmp_path_factory.mktemp("acceptance")
    cache = {}

    def get(name):
        if name not in cache:
            t0 = time.perf_counter()
            out = root / name
            run_experiment(load_config(CONFIGS / f"{name}.yaml"), out)
            with open(out / "results.csv", newline="") as fh:
                rows = list(csv.DictReader(fh))
            with open(out / "summary.csv", newline="") as fh:
                summary = list(csv.DictReader(fh))
            cache[name] = {"rows": rows, "summary": summary, "dir": out,
                           "seconds": time.perf_counter() - t0}
        return cache[name]
    return get


def metric(rows, name, policy=None, rep="0"):
    for r in rows:
        if r["metric"] == name and r["replication"] == rep and (policy is None or r["policy"] == policy):
            return float(r["value"]), float(r["ci_half"])
    return 0.0, 0.0  # an occupancy level never reached


def q_vec(rows, k, policy=None):
    return [metric(rows, f"q_{i}", policy)[0] for i in range(1, k + 1)]


def fmt(xs):
    return "(" + ", ".join(f"{x:.4f}" for x in xs) + ")"


def test_ac01_random_assignment_law(runs):
    r = runs("ac01_random")
    w, w_half = metric(r["summary"], "mean_wait", rep="all")
    p, p_half = metric(r["summary"], "p_wait", rep="all")
    ok = abs(w - 9.0) <= w_half and abs(p - 0.9) <= p_half
    record(1, ok, f"mean_wait {w:.3f} ± {w_half:.3f} (target 9), p_wait {p:.4f} ± {p_half:.4f} "
                  f"(target 0.9), {r['seconds']:.0f}s")
    assert ok


def test_ac02_jsq2_fixed_point(runs):
    r = runs("ac02_jsq2")
    q = q_vec(r["rows"], 3)
    target = (0.9, 0.729, 0.9 ** 7)
    ok = all(abs(a - b) <= 0.02 for a, b in zip(q, target))
    record(2, ok, f"q_1..3 {fmt(q)} vs {fmt(target)} ± 0.02, {r['seconds']:.0f}s")
    assert ok


@pytest.mark.xfail(strict=False, reason=(
    "unattainable as stated: d=floor(log 1000)=6 is a fixed d, whose fluid fixed point "
    "has q_2 = 0.9^7 = 0.478, not ~0; vanishing q_2 needs d(N) -> infinity"))
def test_ac03_universality_fluid_scale(runs):
    r = runs("ac03_jsq_logn")
    q1, q2 = q_vec(r["rows"], 2)
    d = int(r["rows"][0]["d"])
    ok = d == 6 and abs(q1 - 0.9) <= 0.02 and q2 <= 0.05 and 0.729 - q2 >= 0.5
    record(3, ok, f"d={d}: q_1 {q1:.4f} (0.9 ± 0.02), q_2 {q2:.4f} (target <= 0.05, "
                  f"gap to 0.729 {0.729 - q2:.3f} >= 0.5); JSQ({d}) fixed point "
                  f"q_2 = {limits.fixed_point_jsqd(0.9, d)[1]:.4f}")
    assert ok


def test_ac04_halfin_whitt_ordering(runs):
    r = runs("ac04_halfin_whitt")
    rows = r["rows"]
    pw = {p: metric(rows, "p_wait", p)[0] for p in ("jsq", "jiq", "jsw", "jsqd")}
    erl = oracles.erlang_c(400, 380.0).prob_wait
    ok = (pw["jsq"] < 0.1 and pw["jiq"] < 0.1 and abs(pw["jsw"] - erl) <= 0.05
          and pw["jsqd"] > 0.5)
    record(4, ok, f"p_wait JSQ {pw['jsq']:.4f}, JIQ {pw['jiq']:.4f} (< 0.1); JSW {pw['jsw']:.4f} "
                  f"vs Erlang-C {erl:.4f} ± 0.05; JSQ(2) {pw['jsqd']:.4f} (> 0.5)")
    assert ok


def test_ac05_jiq_fluid_optimality(runs):
    r = runs("ac05_jiq")
    q1, q2 = q_vec(r["rows"], 2)
    m = metric(r["rows"], "messages_per_task")[0]
    ok = abs(q1 - 0.9) <= 0.02 and q2 <= 0.02 and m <= 1.0
    record(5, ok, f"q_1 {q1:.4f}, q_2 {q2:.5f}, messages/task {m:.4f}")
    assert ok


def test_ac06_multi_dispatcher_blocking(runs):
    base = metric(runs("ac06_blocking")["rows"], "p_block")[0]
    enh = metric(runs("ac06_blocking_enh_a")["rows"], "p_block")[0]
    oracle = oracles.blocking_limit(2, 0.5, (0.7, 0.3)).value
    ok = abs(base - oracle) <= 0.02 and enh <= 0.02
    record(6, ok, f"p_block {base:.4f} vs {oracle:.4f} ± 0.02; with Enhancement A {enh:.4f} (<= 0.02)")
    assert ok


def test_ac07_multi_dispatcher_queueing(runs):
    w = metric(runs("ac07_queueing")["rows"], "mean_wait")[0]
    o = oracles.queueing_limit(2, 0.8, (0.75, 0.25))
    ok = abs(w - 0.5) <= 0.05
    record(7, ok, f"mean_wait {w:.4f} vs 0.5 ± 0.05 (oracle lambda_2 = {o.lambda2:.4f})")
    assert ok


def test_ac08_infinite_server_fixed_point(runs):
    q = q_vec(runs("ac08_pools")["rows"], 4)
    target = (1.0, 1.0, 0.5, 0.0)
    ok = all(abs(a - b) <= 0.02 for a, b in zip(q, target))
    record(8, ok, f"q_1..4 {fmt(q)} vs {fmt(target)} ± 0.02")
    assert ok


def test_ac09_fluid_solver_consistency():
    cases = []
    for d in (2, 3, 5):
        q = limits.fixed_point_jsqd(0.7, d)
        cases.append((f"JSQ({d})", lambda x, d=d: limits.fluid_rhs_jsqd(x, 0.7, d), q))
    cases.append(("JSQ", lambda x: limits.fluid_rhs_jsq(x, 0.7), limits.fixed_point_jsq(0.7)))
    for lam in (0.7, 2.5):
        q = limits.fixed_point_pool(lam)
        cases.append((f"pool {lam}", lambda x, lam=lam: limits.fluid_rhs_jsq_pool(x, lam), q))
    worst_traj = worst_rhs = 0.0
    for _, rhs, q_star in cases:
        final = limits.integrate_fluid(rhs, np.zeros_like(q_star), 100.0, 0.01).final()
        worst_traj = max(worst_traj, float(np.max(np.abs(final - q_star))))
        worst_rhs = max(worst_rhs, float(np.max(np.abs(rhs(q_star)))))
    ok = worst_traj <= 1e-6 and worst_rhs <= 1e-10
    record(9, ok, f"{len(cases)} cases: max |q(100) - q*| {worst_traj:.2e} (<= 1e-6), "
                  f"max |rhs(q*)| {worst_rhs:.2e} (<= 1e-10)")
    assert ok


def test_ac10_ou_stationary_variance():
    rng = np.random.default_rng(110)
    traj = limits.simulate_diffusion_pool(2.0, case="f>0", t_end=1000.0, step=1e-3, rng=rng,
                                          sample_every=100, paths=32)
    keep = traj.times >= 20.0  # start at 0; relaxation time is 1
    var = float(np.var(traj.states[keep]))
    ok = abs(var - 2.0) <= 0.05 * 2.0
    record(10, ok, f"stationary variance {var:.4f} vs 2.0 ± 5% (32 independent paths)")
    assert ok


def test_ac11_graph_universality_ordering(runs):
    q2 = {k: metric(runs(f"ac11_{k}")["rows"], "q_2")[0] for k in ("clique", "er", "ring")}
    ok = abs(q2["er"] - q2["clique"]) <= 0.03 and q2["ring"] - q2["clique"] >= 0.05
    record(11, ok, f"q_2 clique {q2['clique']:.4f}, ER(0.05) {q2['er']:.4f} (within 0.03), "
                   f"ring {q2['ring']:.4f} (>= clique + 0.05)")
    assert ok


def enumerate_dis1(n, adj, eps):
    """Independent route: walk every subset of size >= ceil(eps N), take the max uncovered."""
    need = math.ceil(eps * n)
    best = 0
    for size in range(need, n + 1):
        for U in combinations(range(n), size):
            covered = set(U)
            for u in U:
                covered |= adj[u]
            best = max(best, n - len(covered))
    return best


def test_ac12_dis_brute_force():
    ring = {v: {(v - 1) % 6, (v + 1) % 6} for v in range(6)}
    clique = {v: set(range(8)) - {v} for v in range(8)}
    edgeless = {v: set() for v in range(6)}
    checks = [(tp.dis1(tp.make_ring(6), 0.5).value, enumerate_dis1(6, ring, 0.5), 1),
              (tp.dis1(tp.make_edgeless(6), 0.5).value, enumerate_dis1(6, edgeless, 0.5), 3)]
    for eps in (0.05, 0.125, 0.3, 0.5, 0.75, 1.0):
        checks.append((tp.dis1(tp.make_clique(8), eps).value, enumerate_dis1(8, clique, eps), 0))
    ok = all(a == b == c for a, b, c in checks)
    record(12, ok, f"{len(checks)} cases; ring_6 {checks[0][0]}, edgeless_6 {checks[1][0]}, "
                   f"clique_8 {sorted({c[0] for c in checks[2:]})}")
    assert ok


def test_ac13_max_queue_concentration(runs):
    def maxima(name):
        rows = runs(name)["rows"]
        return sorted(int(float(r["value"])) for r in rows if r["metric"] == "max_queue")
    m2, mr = maxima("ac13_maxq"), maxima("ac13_maxq_random")
    span2 = m2[-1] - m2[0] + 1
    spanr = mr[-1] - mr[0] + 1
    ok = len(m2) == len(mr) == 20 and span2 <= 3 and spanr >= 5
    record(13, ok, f"JSQ(2) M(N) in {sorted(set(m2))} (span {span2} <= 3); "
                   f"Random in [{mr[0]}, {mr[-1]}] (span {spanr} >= 5)")
    assert ok


def test_ac14_determinism(runs, tmp_path):
    names = ["ac04_halfin_whitt", "ac06_blocking", "ac07_queueing", "ac08_pools", "ac13_maxq"]
    same = []
    for name in names:
        first = runs(name)["dir"]
        again = tmp_path / name
        run_experiment(load_config(CONFIGS / f"{name}.yaml"), again)
        same.append(all((first / f).read_bytes() == (again / f).read_bytes()
                        for f in ("results.csv", "summary.csv")))
    ok = all(same)
    record(14, ok, f"{sum(same)}/{len(names)} acceptance configs rerun byte-identical")
    assert ok
