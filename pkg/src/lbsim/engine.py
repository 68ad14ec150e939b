"""Event-driven simulation of N parallel stations behind a dispatcher.

Two station models share one kernel:

* ``SingleServerQueue``: one FCFS server per station, unit-mean exponential
  services.
* ``ServerPool(B)``: every admitted task is served at once, so a pool with
  i tasks completes at rate i; arrivals to a full pool are blocked.

Occupancy is kept in buckets (``members[c]`` = stations with exactly c
tasks) together with Q_k = #{stations with >= k tasks} and its running time
integral, so the occupancy vector and its time average cost O(1) per event.

The event loop is written out longhand with local variables because it runs
tens of millions of times per experiment.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from itertools import count
from typing import Callable

from . import policies as pol
from .rng import Streams
from .stats import (DEFAULT_BATCHES, DEFAULT_WARMUP_FRACTION, BatchAccumulator,
                    RunSummary, message_count)

# event kinds; policies own kinds >= 10
DEP = 0
WARMUP = 2
END = 3
SAMPLE = 4
ARRIVAL = -1  # only reported to observers, never stored in the heap


@dataclass(frozen=True)
class SingleServerQueue:
    tag = "single_server"


@dataclass(frozen=True)
class ServerPool:
    capacity: int | None = None  # None means unlimited
    tag = "pool"

    def __post_init__(self):
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("pool capacity must be >= 1")


@dataclass
class SimConfig:
    n_stations: int
    arrival_rate: float  # aggregate, tasks per unit time
    policy: pol.PolicySpec
    horizon: float
    warmup: float | None = None  # default: 20% of horizon
    seed: int = 0
    dynamics: SingleServerQueue | ServerPool = field(default_factory=SingleServerQueue)
    topology: object = None
    dispatchers: pol.MultiDispatcherSpec | None = None
    n_batches: int = DEFAULT_BATCHES
    sample_interval: float | None = None  # record occupancy snapshots in the window
    record_effort: bool = False  # keep per-task service effort (redundancy checks)

    def __post_init__(self):
        if self.warmup is None:
            self.warmup = DEFAULT_WARMUP_FRACTION * self.horizon

    def validate(self) -> None:
        n = self.n_stations
        if n < 1:
            raise ValueError("n_stations must be >= 1")
        if self.arrival_rate < 0 or not math.isfinite(self.arrival_rate):
            raise ValueError("arrival_rate must be a finite non-negative number")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")
        if not self.horizon > self.warmup:
            raise ValueError(f"horizon ({self.horizon}) must exceed warmup ({self.warmup})")
        if self.n_batches < 2:
            raise ValueError("need at least 2 batches")
        if self.sample_interval is not None and not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")
        pool = isinstance(self.dynamics, ServerPool)
        if pool and isinstance(self.policy, pol.WORKLOAD_AWARE):
            raise ValueError(f"{type(self.policy).__name__} is only defined for single-server queues")
        if self.dispatchers is not None and not isinstance(self.policy, pol.JIQ):
            raise ValueError("multiple dispatchers are only supported with the JIQ policy")
        blocking = self.dispatchers is not None and self.dispatchers.scenario == pol.BLOCKING
        if not pool and not blocking and self.arrival_rate >= n:
            raise ValueError(f"single-server queues are unstable for arrival_rate {self.arrival_rate} >= N={n}")
        if self.topology is not None and self.topology.n != n:
            raise ValueError(f"topology has {self.topology.n} vertices but N={n}")
        pol.validate(self.policy, n)

    def hash(self) -> str:
        """Stable digest of everything that affects the output."""
        top = self.topology
        top_id = None
        if top is not None:
            top_id = (top.kind, top.n, hashlib.sha256(repr(top.edges()).encode()).hexdigest())
        key = repr((self.n_stations, float(self.arrival_rate), self.policy, float(self.horizon),
                    float(self.warmup), int(self.seed), self.dynamics, top_id, self.dispatchers,
                    self.n_batches, self.sample_interval))
        return hashlib.sha256(key.encode()).hexdigest()[:16]


def occupancy(levels) -> tuple[int, ...]:
    """Q_i = #{stations with count >= i}, up to the largest count present."""
    top = max(levels, default=0)
    hist = [0] * (top + 1)
    for c in levels:
        hist[c] += 1
    out = []
    acc = 0
    for i in range(top, 0, -1):
        acc += hist[i]
        out.append(acc)
    return tuple(reversed(out))


class Simulation:
    """One replication. Build, then call :meth:`run` once."""

    def __init__(self, config: SimConfig):
        config.validate()
        self.config = config
        n = config.n_stations
        self.n = n
        self.level = [0] * n
        self.members: list[list[int]] = [list(range(n))]
        self.pos = list(range(n))
        self.Q = [n]  # Q[0] = N; Q[k] for k >= 1
        self.queues = [deque() for _ in range(n)]
        self.busy_until = [0.0] * n
        self.streams = Streams(config.seed)
        self.heap: list = []
        self._seq = count()
        self.effort_log: list[tuple[float, float]] = []
        seq = self._seq
        heap = self.heap

        def push(t, kind, a, b):
            heapq.heappush(heap, (t, next(seq), kind, a, b))
        self.push = push
        ctx = pol.Context(n=n, members=self.members, pos=self.pos, level=self.level,
                          busy_until=self.busy_until, streams=self.streams, push=push,
                          topology=config.topology, dispatchers=config.dispatchers)
        self.runtime = pol.build(config.policy, ctx)
        self._done = False

    def occupancy(self) -> tuple[int, ...]:
        q = self.Q
        k = len(q) - 1
        while k > 0 and q[k] == 0:
            k -= 1
        return tuple(q[1:k + 1])

    def in_system(self) -> int:
        return sum(self.Q[1:])

    def run(self, observer: Callable | None = None) -> RunSummary:
        """Simulate and summarise.

        ``observer(sim, t, kind, station, n_arrivals, n_departures, n_blocked)``
        is called after every event when given; it is meant for tests.
        """
        if self._done:
            raise RuntimeError("a Simulation runs once; build a new one")
        self._done = True
        cfg = self.config
        n = self.n
        lam = float(cfg.arrival_rate)
        warmup, horizon = float(cfg.warmup), float(cfg.horizon)
        acc = BatchAccumulator(warmup, horizon, cfg.n_batches)
        nb = acc.n_batches
        inv_blen = acc.inv_len
        b_arr, b_blk = acc.arrivals, acc.blocked
        b_srv, b_wtd, b_wsum, b_rsum = acc.served, acc.waited, acc.wait_sum, acc.resp_sum

        heap = self.heap
        push = self.push
        seq = self._seq
        heappush, heappop = heapq.heappush, heapq.heappop
        level, members, pos, Q = self.level, self.members, self.pos, self.Q
        area = [0.0]
        tlast = [0.0]
        queues = self.queues
        busy_until = self.busy_until
        rt = self.runtime
        choose, on_idle, on_depart, on_assign = rt.choose, rt.on_idle, rt.on_depart, rt.on_assign
        handle = rt.handle
        msg = rt.msg
        needs_origin = rt.needs_origin
        origin_u = self.streams["routing"].uniform
        next_arr = self.streams["arrivals"].exponential
        next_svc = self.streams["services"].exponential

        pool = isinstance(cfg.dynamics, ServerPool)
        cap = (cfg.dynamics.capacity or (1 << 62)) if pool else 0
        cloning = rt.targets is not None

        push(warmup, WARMUP, 0, 0)
        push(horizon, END, 0, 0)
        sample_times: list[float] = []
        sample_rows: list[list[int]] = []
        if cfg.sample_interval:
            k = 1
            while warmup + k * cfg.sample_interval < horizon:
                push(warmup + k * cfg.sample_interval, SAMPLE, 0, 0)
                k += 1
        if rt.start is not None:
            rt.start(0.0)

        INF = math.inf
        inv_lam = 1.0 / lam if lam > 0 else 0.0
        ta = next_arr() * inv_lam if lam > 0 else INF
        aseq = next(seq)
        measuring = False
        draining = False
        pend = [0]  # window tasks whose wait (or response) is not yet known
        peak = [0]
        snap = {}
        n_arr = n_dep = n_blk = 0
        # messages charged to window tasks (probes at arrival, tokens and
        # cancellations at departure) plus timer-driven ones sent in the window
        wmsg = [0]

        if cloning:
            clone_arrive, clone_depart = self._clone_handlers(
                acc, pend, peak, area, tlast, rt.targets, rt.state["abort"], msg, wmsg)

        while True:
            if heap and (heap[0][0] < ta or (heap[0][0] == ta and heap[0][1] < aseq)):
                t, _, kind, s, b = heappop(heap)
                if kind == DEP:
                    if cloning:
                        if not clone_depart(t, s, b):
                            continue
                    else:
                        c = level[s]
                        # station s: c -> c-1
                        lst = members[c]
                        p = pos[s]
                        last = lst.pop()
                        if last != s:
                            lst[p] = last
                            pos[last] = p
                        nl = members[c - 1]
                        pos[s] = len(nl)
                        nl.append(s)
                        level[s] = c - 1
                        area[c] += Q[c] * (t - tlast[c])
                        tlast[c] = t
                        Q[c] -= 1
                        m0 = msg[0]
                        if not pool and c > 1:
                            t0, x, bb = queues[s].popleft()
                            if bb >= 0:
                                w = t - t0
                                b_srv[bb] += 1
                                b_wsum[bb] += w
                                b_rsum[bb] += w + x
                                if w > 0.0:
                                    b_wtd[bb] += 1
                                pend[0] -= 1
                            heappush(heap, (t + x, next(seq), DEP, s, bb))
                        elif c == 1 and on_idle is not None:
                            on_idle(s, t)
                        if on_depart is not None:
                            on_depart(s, c - 1)
                        if b >= 0:
                            wmsg[0] += msg[0] - m0
                    n_dep += 1
                    if observer is not None:
                        observer(self, t, kind, s, n_arr, n_dep, n_blk)
                    if draining and pend[0] == 0:
                        break
                    continue
                if draining:
                    continue  # after the horizon only departures matter
                if kind == WARMUP:
                    for k in range(1, len(Q)):
                        area[k] = 0.0
                        tlast[k] = t
                    measuring = True
                    peak[0] = self._top()
                elif kind == END:
                    snap["area"] = [area[k] + Q[k] * (t - tlast[k]) for k in range(1, len(Q))]
                    snap["max_queue"] = self._top()
                    snap["peak"] = peak[0]
                    measuring = False
                    draining = True
                    ta = INF
                    if pend[0] == 0:
                        break
                elif kind == SAMPLE:
                    sample_times.append(t)
                    sample_rows.append(list(self.occupancy()))
                elif handle is not None:
                    m0 = msg[0]
                    handle(kind, s, b, t)
                    if measuring:
                        wmsg[0] += msg[0] - m0
                if observer is not None:
                    observer(self, t, kind, s, n_arr, n_dep, n_blk)
                continue

            if ta == INF:
                break
            # arrival
            t = ta
            ta = t + next_arr() * inv_lam
            aseq = next(seq)
            n_arr += 1
            if measuring:
                bb = int((t - warmup) * inv_blen)
                if bb >= nb:
                    bb = nb - 1
                b_arr[bb] += 1
            else:
                bb = -1
            if cloning:
                clone_arrive(t, bb, int(origin_u() * n) if needs_origin else 0)
                if observer is not None:
                    observer(self, t, ARRIVAL, -1, n_arr, n_dep, n_blk)
                continue
            m0 = msg[0]
            s = choose(int(origin_u() * n) if needs_origin else 0)
            if bb >= 0:
                wmsg[0] += msg[0] - m0
            x = next_svc()
            if s < 0 or (pool and level[s] >= cap):
                n_blk += 1
                if bb >= 0:
                    b_blk[bb] += 1
                if observer is not None:
                    observer(self, t, ARRIVAL, s, n_arr, n_dep, n_blk)
                continue
            c = level[s]
            # station s: c -> c+1
            lst = members[c]
            p = pos[s]
            last = lst.pop()
            if last != s:
                lst[p] = last
                pos[last] = p
            k = c + 1
            if k == len(members):
                members.append([])
                Q.append(0)
                area.append(0.0)
                tlast.append(t)
            nl = members[k]
            pos[s] = len(nl)
            nl.append(s)
            level[s] = k
            area[k] += Q[k] * (t - tlast[k])
            tlast[k] = t
            Q[k] += 1
            if k > peak[0]:
                peak[0] = k
            if pool or c == 0:
                if bb >= 0:
                    b_srv[bb] += 1
                    b_rsum[bb] += x
                heappush(heap, (t + x, next(seq), DEP, s, bb))
                if not pool:
                    busy_until[s] = t + x
            else:
                queues[s].append((t, x, bb))
                if bb >= 0:
                    pend[0] += 1
                busy_until[s] += x
            if on_assign is not None:
                on_assign(s)
            if observer is not None:
                observer(self, t, ARRIVAL, s, n_arr, n_dep, n_blk)

        self.totals = (n_arr, n_dep, n_blk)
        snap["msgs"] = wmsg[0]
        return self._summarise(acc, snap, sample_times, sample_rows, pool)

    def _top(self) -> int:
        m = self.members
        k = len(m) - 1
        while k > 0 and not m[k]:
            k -= 1
        return k

    def _clone_handlers(self, acc, pend, peak, area, tlast, targets, abort, msg, wmsg):
        """Arrival/departure handlers for policies that place several replicas."""
        level, members, pos, Q = self.level, self.members, self.pos, self.Q
        queues = self.queues
        push = self.push
        n = self.n
        next_svc = self.streams["services"].exponential
        serving: list = [None] * n
        sstart = [0.0] * n
        epoch = [0] * n
        on_complete = abort == pol.ON_COMPLETE
        record_effort = self.config.record_effort
        effort_log = self.effort_log

        def inc(s, t):
            c = level[s]
            lst = members[c]
            p = pos[s]
            last = lst.pop()
            if last != s:
                lst[p] = last
                pos[last] = p
            k = c + 1
            if k == len(members):
                members.append([])
                Q.append(0)
                area.append(0.0)
                tlast.append(t)
            nl = members[k]
            pos[s] = len(nl)
            nl.append(s)
            level[s] = k
            area[k] += Q[k] * (t - tlast[k])
            tlast[k] = t
            Q[k] += 1
            if k > peak[0]:
                peak[0] = k

        def dec(s, t):
            c = level[s]
            lst = members[c]
            p = pos[s]
            last = lst.pop()
            if last != s:
                lst[p] = last
                pos[last] = p
            nl = members[c - 1]
            pos[s] = len(nl)
            nl.append(s)
            level[s] = c - 1
            area[c] += Q[c] * (t - tlast[c])
            tlast[c] = t
            Q[c] -= 1

        # task record: [t_arr, service(s), batch, done, stations, first_start, effort]
        def finish(task, t):
            b = task[2]
            if b >= 0:
                w = task[5] - task[0]
                acc.served[b] += 1
                acc.wait_sum[b] += w
                acc.resp_sum[b] += t - task[0]
                if w > 0.0:
                    acc.waited[b] += 1
                pend[0] -= 1
            if record_effort:
                x = task[1]
                effort_log.append((task[6], min(x) if on_complete else x))

        def begin(s, task, i, t):
            serving[s] = (task, i)
            sstart[s] = t
            epoch[s] += 1
            if task[5] < 0:
                task[5] = t
            x = task[1][i] if on_complete else task[1]
            push(t + x, DEP, s, epoch[s])
            if not on_complete:
                # first replica in service: abandon the queued siblings
                task[3] = 1
                for s2 in task[4]:
                    if s2 != s:
                        dec(s2, t)
                        charge(task, 1)

        def start_next(s, t):
            q = queues[s]
            while q:
                task, i = q.popleft()
                if not task[3]:
                    begin(s, task, i, t)
                    return

        def charge(task, k):
            msg[0] += k
            if task[2] >= 0:
                wmsg[0] += k

        def arrive(t, b, origin):
            m0 = msg[0]
            tg = list(targets(origin))
            if b >= 0:
                wmsg[0] += msg[0] - m0
            if b >= 0:
                pend[0] += 1
            if on_complete:
                task = [t, [next_svc() for _ in tg], b, 0, tg, -1.0, 0.0]
                for i, s in enumerate(tg):
                    idle = level[s] == 0
                    inc(s, t)
                    if idle:
                        begin(s, task, i, t)
                    else:
                        queues[s].append((task, i))
                return
            task = [t, next_svc(), b, 0, tg, -1.0, 0.0]
            for s in tg:
                if level[s] == 0:
                    task[4] = [s]
                    charge(task, len(tg) - 1)
                    inc(s, t)
                    begin(s, task, 0, t)
                    return
            for s in tg:
                inc(s, t)
                queues[s].append((task, 0))

        def depart(t, s, ep):
            if ep != epoch[s] or serving[s] is None:
                return False  # cancelled replica
            task, _ = serving[s]
            task[6] += t - sstart[s]
            serving[s] = None
            dec(s, t)
            if on_complete:
                task[3] = 1
                for s2 in task[4]:
                    if s2 == s:
                        continue
                    cur = serving[s2]
                    if cur is not None and cur[0] is task:
                        task[6] += t - sstart[s2]
                        serving[s2] = None
                        epoch[s2] += 1
                        dec(s2, t)
                        start_next(s2, t)
                    else:
                        dec(s2, t)
                    charge(task, 1)
            finish(task, t)
            start_next(s, t)
            return True

        self._serving = serving
        return arrive, depart

    def _summarise(self, acc, snap, sample_times, sample_rows, pool) -> RunSummary:
        cfg = self.config
        n = self.n
        span = cfg.horizon - cfg.warmup
        areas = snap.get("area", [])
        q = [a / (n * span) for a in areas]
        while q and q[-1] == 0.0:
            q.pop()
        arrivals = acc.total_arrivals
        msgs = snap.get("msgs", 0)
        mean_tasks = sum(areas) / span
        mean_waiting = 0.0 if pool else sum(areas[1:]) / span
        if self.runtime.targets is not None:
            mean_waiting = float("nan")  # replicas make "waiting" ambiguous
        ci_ok = all(v > 0 for v in acc.served) or arrivals == 0
        qbar = None
        if sample_rows:
            from .stats import diffusion_scale
            qbar = [diffusion_scale(r, n).tolist() for r in sample_rows]
        return RunSummary(
            mean_wait=acc.mean_wait(),
            p_wait=acc.p_wait(),
            p_block=acc.p_block(),
            mean_response=acc.mean_response(),
            q_stationary=q,
            max_queue=snap.get("max_queue", 0),
            max_queue_peak=snap.get("peak", 0),
            messages_per_task=message_count(msgs, arrivals),
            arrivals=arrivals,
            blocked=acc.total_blocked,
            served=acc.total_served,
            mean_tasks=mean_tasks,
            mean_waiting=mean_waiting,
            window=(float(cfg.warmup), float(cfg.horizon)),
            seed=cfg.seed,
            config_hash=cfg.hash(),
            ci_reliable=ci_ok,
            qbar_path=qbar,
            sample_times=sample_times or None,
            extra={"occupancy_rows": sample_rows} if sample_rows else {},
        )


def run(config: SimConfig, observer: Callable | None = None) -> RunSummary:
    return Simulation(config).run(observer)
