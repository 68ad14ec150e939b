"""Dispatching rules.

A policy is described by a small frozen spec (``JSQd(d=2)``, ``JIQ()``, ...)
and turned into a runtime by :func:`build`. The runtime exposes plain
closures that the engine calls on every arrival, so the hot loop pays one
function call per decision and nothing else.

Runtimes read the engine's occupancy buckets directly: ``members[c]`` lists
the stations holding exactly ``c`` tasks and ``level[s]`` is the count of
station ``s``. Ties are broken uniformly at random everywhere unless a rule
says otherwise.
"""

from __future__ import annotations

import bisect
import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

# extra event kinds owned by policies (the engine reserves 0..9)
EV_TOKEN_EXCHANGE = 10
EV_REPORT = 11

ON_START = "on_start"
ON_COMPLETE = "on_complete"
FULL = "full"
ZERO_ONLY = "zero_only"
BLOCKING = "blocking"
QUEUEING = "queueing"


@dataclass(frozen=True)
class Random:
    tag = "random"


@dataclass(frozen=True)
class RoundRobin:
    tag = "round_robin"


@dataclass(frozen=True)
class JSQ:
    tag = "jsq"


@dataclass(frozen=True)
class JSQd:
    d: int
    replacement: bool = False
    tag = "jsqd"


@dataclass(frozen=True)
class CJSQ:
    n: int
    tag = "cjsq"


@dataclass(frozen=True)
class JSW:
    tag = "jsw"


@dataclass(frozen=True)
class RedundancyD:
    d: int
    abort: str = ON_START
    tag = "redundancy"


@dataclass(frozen=True)
class RSQ:
    d: int
    tag = "rsq"


@dataclass(frozen=True)
class JIQ:
    tag = "jiq"


@dataclass(frozen=True)
class I1F:
    tag = "i1f"


@dataclass(frozen=True)
class SparseFeedback:
    update_rate: float  # reports per unit time, per station
    report_mode: str = FULL
    tag = "sparse_feedback"


@dataclass(frozen=True)
class GraphJSQ:
    tag = "graph_jsq"


PolicySpec = Union[Random, RoundRobin, JSQ, JSQd, CJSQ, JSW, RedundancyD, RSQ, JIQ, I1F,
                   SparseFeedback, GraphJSQ]


@dataclass(frozen=True)
class EnhancementA:
    beta: tuple[float, ...]  # token destination probabilities


@dataclass(frozen=True)
class EnhancementB:
    nu: float  # per-token exchange rate


@dataclass(frozen=True)
class MultiDispatcherSpec:
    R: int
    alpha: tuple[float, ...]
    scenario: str = BLOCKING
    enhancement: EnhancementA | EnhancementB | None = None

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if self.R < 1:
            raise ValueError("R must be >= 1")
        _check_probs(self.alpha, self.R, "alpha")
        if any(self.alpha[i] < self.alpha[i + 1] - 1e-12 for i in range(self.R - 1)):
            raise ValueError("alpha must be non-increasing")
        if self.scenario not in (BLOCKING, QUEUEING):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        enh = self.enhancement
        if isinstance(enh, EnhancementA):
            object.__setattr__(self, "enhancement", EnhancementA(tuple(float(b) for b in enh.beta)))
            _check_probs(self.enhancement.beta, self.R, "beta", allow_zero=True)
        elif isinstance(enh, EnhancementB):
            if not enh.nu > 0:
                raise ValueError("token exchange rate nu must be positive")
        elif enh is not None:
            raise ValueError(f"unknown enhancement {enh!r}")


def _check_probs(p: Sequence[float], R: int, name: str, allow_zero: bool = False) -> None:
    if len(p) != R:
        raise ValueError(f"{name} has {len(p)} entries, expected R={R}")
    if any(x < 0 or (x == 0 and not allow_zero) for x in p):
        raise ValueError(f"{name} entries must be positive")
    if abs(sum(p) - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to 1")


WORKLOAD_AWARE = (JSW, RedundancyD, RSQ)
CLONING = (RedundancyD, RSQ)


def validate(spec: PolicySpec, n: int) -> None:
    if isinstance(spec, (JSQd, RedundancyD, RSQ)):
        if spec.d < 1:
            raise ValueError("d must be >= 1")
        if spec.d > n and not (isinstance(spec, JSQd) and spec.replacement):
            raise ValueError(f"d={spec.d} exceeds N={n} for sampling without replacement")
    if isinstance(spec, CJSQ) and not 0 <= spec.n <= n - 1:
        raise ValueError(f"CJSQ needs 0 <= n <= N-1, got n={spec.n}")
    if isinstance(spec, RedundancyD) and spec.abort not in (ON_START, ON_COMPLETE):
        raise ValueError(f"unknown abort mode {spec.abort!r}")
    if isinstance(spec, SparseFeedback):
        if not spec.update_rate > 0:
            raise ValueError("update_rate must be positive")
        if spec.report_mode not in (FULL, ZERO_ONLY):
            raise ValueError(f"unknown report mode {spec.report_mode!r}")


@dataclass
class Context:
    """What a runtime may see of the engine."""
    n: int
    members: list[list[int]]
    pos: list[int]
    level: list[int]
    busy_until: list[float]
    streams: object
    push: Callable[[float, int, int, int], None]
    topology: object = None
    dispatchers: MultiDispatcherSpec | None = None


@dataclass
class Runtime:
    choose: Callable[[int], int] | None = None
    targets: Callable[[int], list[int]] | None = None
    on_idle: Callable[[int, float], None] | None = None
    on_depart: Callable[[int, int], None] | None = None
    on_assign: Callable[[int], None] | None = None
    handle: Callable[[int, int, int, float], None] | None = None
    start: Callable[[float], None] | None = None
    msg: list = field(default_factory=lambda: [0])
    needs_origin: bool = False
    state: dict = field(default_factory=dict)  # exposed for invariant checks


def _lowest(members: list[list[int]]) -> int:
    lo = 0
    while not members[lo]:
        lo += 1
    return lo


def d_smallest(members: list[list[int]], d: int) -> list[int]:
    """The d stations of lowest count, ties by station id."""
    out: list[int] = []
    lo = 0
    while len(out) < d:
        lst = members[lo]
        need = d - len(out)
        out.extend(lst if len(lst) <= need else sorted(lst)[:need])
        lo += 1
    return out


def build(spec: PolicySpec, ctx: Context) -> Runtime:
    validate(spec, ctx.n)
    builder = _BUILDERS.get(type(spec))
    if builder is None:
        raise ValueError(f"unsupported policy {spec!r}")
    return builder(spec, ctx)


def _build_random(spec, ctx):
    u = ctx.streams["policy"].uniform
    n = ctx.n
    return Runtime(choose=lambda origin: int(u() * n))


def _build_round_robin(spec, ctx):
    n = ctx.n
    cursor = [0]

    def choose(origin):
        s = cursor[0]
        cursor[0] = s + 1 if s + 1 < n else 0
        return s
    return Runtime(choose=choose)


def _jsq_chooser(ctx, msg, per_task):
    u = ctx.streams["policy"].uniform
    members = ctx.members

    def choose(origin):
        msg[0] += per_task
        lo = 0
        while not members[lo]:
            lo += 1
        lst = members[lo]
        return lst[int(u() * len(lst))]
    return choose


def _build_jsq(spec, ctx):
    rt = Runtime()
    rt.choose = _jsq_chooser(ctx, rt.msg, 2 * ctx.n)
    return rt


def _build_jsqd(spec, ctx):
    n, d = ctx.n, spec.d
    u = ctx.streams["policy"].uniform
    level = ctx.level
    rt = Runtime()
    msg = rt.msg
    per_task = 2 * d
    if d == 1:
        def choose_one(origin):
            msg[0] += 2
            return int(u() * n)
        rt.choose = choose_one
        return rt

    if not spec.replacement:
        perm = list(range(n))

        def choose(origin):
            # partial Fisher-Yates: perm[:d] becomes a uniform sample in
            # uniform order, so the first minimum is uniform among ties
            msg[0] += per_task
            best = 1 << 60
            pick = -1
            for j in range(d):
                k = j + int(u() * (n - j))
                s = perm[k]
                perm[k] = perm[j]
                perm[j] = s
                c = level[s]
                if c < best:
                    if c == 0:
                        return s
                    best = c
                    pick = s
            return pick
        rt.choose = choose
        return rt

    def choose_repl(origin):
        msg[0] += per_task
        best = 1 << 60
        ties: list[int] = []
        for _ in range(d):
            s = int(u() * n)
            c = level[s]
            if c < best:
                best = c
                ties = [s]
            elif c == best and s not in ties:
                ties.append(s)
        return ties[0] if len(ties) == 1 else ties[int(u() * len(ties))]
    rt.choose = choose_repl
    return rt


def _build_cjsq(spec, ctx):
    u = ctx.streams["policy"].uniform
    members = ctx.members
    width = spec.n + 1
    rt = Runtime()
    msg = rt.msg
    per_task = 2 * ctx.n

    def choose(origin):
        msg[0] += per_task
        r = int(u() * width)
        lo = 0
        while r >= len(members[lo]):
            r -= len(members[lo])
            lo += 1
        lst = members[lo]
        if r == 0:
            return min(lst)
        return heapq.nsmallest(r + 1, lst)[-1]
    rt.choose = choose
    return rt


def _build_jsw(spec, ctx):
    u = ctx.streams["policy"].uniform
    members = ctx.members
    busy_until = ctx.busy_until
    n = ctx.n
    heap: list[tuple[float, int]] = []
    rt = Runtime()
    msg = rt.msg
    per_task = 2 * n

    def choose(origin):
        msg[0] += per_task
        idle = members[0]
        if idle:
            return idle[int(u() * len(idle))]
        # all busy: smallest finishing time; stale heap entries are skipped
        while True:
            b, s = heap[0]
            if busy_until[s] == b:
                return s
            heapq.heappop(heap)

    def on_assign(s):
        heapq.heappush(heap, (busy_until[s], s))
        if len(heap) > 4 * n:
            heap[:] = [(busy_until[v], v) for v in range(n)]
            heapq.heapify(heap)
    rt.choose = choose
    rt.on_assign = on_assign
    return rt


def _build_redundancy(spec, ctx):
    n, d = ctx.n, spec.d
    u = ctx.streams["policy"].uniform
    perm = list(range(n))
    rt = Runtime()
    msg = rt.msg

    def targets(origin):
        msg[0] += d
        for j in range(d):
            k = j + int(u() * (n - j))
            s = perm[k]
            perm[k] = perm[j]
            perm[j] = s
        return perm[:d]
    rt.targets = targets
    rt.state["abort"] = spec.abort
    return rt


def _build_rsq(spec, ctx):
    members = ctx.members
    d = spec.d
    rt = Runtime()
    msg = rt.msg
    per_task = 2 * ctx.n + d

    def targets(origin):
        msg[0] += per_task
        return d_smallest(members, d)
    rt.targets = targets
    rt.state["abort"] = ON_START
    return rt


def _build_i1f(spec, ctx):
    u = ctx.streams["policy"].uniform
    members = ctx.members
    n = ctx.n
    rt = Runtime()
    msg = rt.msg

    def choose(origin):
        lst = members[0]
        if not lst and len(members) > 1:
            lst = members[1]
        if lst:
            return lst[int(u() * len(lst))]
        return int(u() * n)

    def on_depart(s, count):
        # a server reports when it turns idle or drops to one task
        if count <= 1:
            msg[0] += 1
    rt.choose = choose
    rt.on_depart = on_depart
    return rt


def _build_graph_jsq(spec, ctx):
    top = ctx.topology
    if top is None:
        raise ValueError("graph policy needs a topology")
    if top.n != ctx.n:
        raise ValueError(f"topology has {top.n} vertices but N={ctx.n}")
    rt = Runtime()
    if top.is_complete():
        rt.choose = _jsq_chooser(ctx, rt.msg, 2 * (ctx.n - 1))
        return rt
    u = ctx.streams["policy"].uniform
    level = ctx.level
    closed = [(v,) + tuple(top.adjacency[v]) for v in range(top.n)]
    cost = [2 * len(top.adjacency[v]) for v in range(top.n)]
    msg = rt.msg

    def choose(origin):
        msg[0] += cost[origin]
        best = 1 << 60
        pick = origin
        k = 0
        for v in closed[origin]:
            c = level[v]
            if c < best:
                best = c
                pick = v
                k = 1
            elif c == best:
                # reservoir step keeps the pick uniform among ties
                k += 1
                if u() * k < 1.0:
                    pick = v
        return pick
    rt.choose = choose
    rt.needs_origin = True
    return rt


def _build_sparse(spec, ctx):
    n = ctx.n
    u = ctx.streams["policy"].uniform
    rep = ctx.streams["reports"]
    level = ctx.level
    push = ctx.push
    # estimate buckets, same layout as the engine's occupancy buckets
    est = [0] * n
    emembers: list[list[int]] = [list(range(n))]
    epos = list(range(n))
    rate_total = spec.update_rate * n
    zero_only = spec.report_mode == ZERO_ONLY
    rt = Runtime()
    msg = rt.msg

    def move(s, new):
        old = est[s]
        lst = emembers[old]
        p = epos[s]
        last = lst.pop()
        if last != s:
            lst[p] = last
            epos[last] = p
        while len(emembers) <= new:
            emembers.append([])
        nl = emembers[new]
        epos[s] = len(nl)
        nl.append(s)
        est[s] = new

    def choose(origin):
        lo = 0
        while not emembers[lo]:
            lo += 1
        lst = emembers[lo]
        s = lst[int(u() * len(lst))]
        move(s, lo + 1)
        return s

    def start(t):
        push(t + rep.exponential() / rate_total, EV_REPORT, 0, 0)

    def handle(kind, a, b, t):
        # superposed per-station Poisson clocks: one clock, uniform station
        s = int(rep.uniform() * n)
        c = level[s]
        if zero_only:
            if c == 0:
                msg[0] += 1
                if est[s] != 0:
                    move(s, 0)
        else:
            msg[0] += 1
            if est[s] != c:
                move(s, c)
        push(t + rep.exponential() / rate_total, EV_REPORT, 0, 0)
    rt.choose = choose
    rt.start = start
    rt.handle = handle
    rt.state["estimates"] = est
    return rt


def _build_jiq(spec, ctx):
    n = ctx.n
    md = ctx.dispatchers or MultiDispatcherSpec(1, (1.0,), QUEUEING)
    R = md.R
    tok = ctx.streams["tokens"]
    route = ctx.streams["routing"]
    pol = ctx.streams["policy"]
    push = ctx.push
    members = ctx.members
    alpha_cum = _cumulative(md.alpha)
    enh = md.enhancement
    beta_cum = _cumulative(enh.beta) if isinstance(enh, EnhancementA) else None
    nu = enh.nu if isinstance(enh, EnhancementB) else 0.0
    blocking = md.scenario == BLOCKING

    tokens: list[list[int]] = [[] for _ in range(R)]
    holder = [-1] * n  # dispatcher holding station s's token, or -1
    tpos = [0] * n
    epoch = [0] * n  # bumped whenever a token moves or dies
    rt = Runtime()
    msg = rt.msg
    rt.state.update(tokens=tokens, holder=holder)

    def pick_dispatcher(cum, stream):
        if R == 1:
            return 0
        return min(bisect.bisect_right(cum, stream.uniform()), R - 1)

    def drop(s):
        r = holder[s]
        lst = tokens[r]
        p = tpos[s]
        last = lst.pop()
        if last != s:
            lst[p] = last
            tpos[last] = p
        holder[s] = -1
        epoch[s] += 1

    def place(s, r, t):
        holder[s] = r
        tpos[s] = len(tokens[r])
        tokens[r].append(s)
        epoch[s] += 1
        if nu > 0.0:
            push(t + tok.exponential() / nu, EV_TOKEN_EXCHANGE, s, epoch[s])

    def issue(s, t):
        r = pick_dispatcher(beta_cum, tok) if beta_cum else int(tok.uniform() * R)
        place(s, r, t)

    def on_idle(s, t):
        msg[0] += 1
        issue(s, t)

    def choose(origin):
        r = pick_dispatcher(alpha_cum, route)
        lst = tokens[r]
        if lst:
            s = lst[int(pol.uniform() * len(lst))]
            drop(s)
            return s
        if blocking:
            return -1
        s = int(pol.uniform() * n)
        if holder[s] >= 0:
            msg[0] += 1  # revoke the idle server's outstanding token
            drop(s)
        return s

    def start(t):
        for s in members[0]:
            issue(s, t)

    def handle(kind, s, ep, t):
        if epoch[s] != ep:
            return
        msg[0] += 1
        drop(s)
        place(s, int(tok.uniform() * R), t)
    rt.choose = choose
    rt.on_idle = on_idle
    rt.start = start
    rt.handle = handle if nu > 0.0 else None
    return rt


def _cumulative(p: Sequence[float]) -> list[float]:
    out, acc = [], 0.0
    for x in p:
        acc += x
        out.append(acc)
    out[-1] = math.inf  # guard against rounding in the last bucket
    return out


_BUILDERS = {
    Random: _build_random,
    RoundRobin: _build_round_robin,
    JSQ: _build_jsq,
    JSQd: _build_jsqd,
    CJSQ: _build_cjsq,
    JSW: _build_jsw,
    RedundancyD: _build_redundancy,
    RSQ: _build_rsq,
    I1F: _build_i1f,
    GraphJSQ: _build_graph_jsq,
    SparseFeedback: _build_sparse,
    JIQ: _build_jiq,
}
