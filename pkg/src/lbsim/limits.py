"""Fluid ODEs, fixed points and reflected diffusions for large-N load balancing.

Fluid states are finite vectors ``q = (q_1, ..., q_imax)`` with the implicit
boundary values ``q_0 = 1`` and ``q_{imax+1} = 0``; ``q_i`` is the fraction
of stations holding ``i`` or more tasks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

FluidRhs = Callable[[np.ndarray], np.ndarray]

_TAIL_CUTOFF = 1e-12
_TAIL_MARGIN = 5


@dataclass
class Trajectory:
    """Sampled path of a deterministic or stochastic limit process."""

    times: np.ndarray
    states: np.ndarray  # shape (len(times), dim)
    regulator: np.ndarray | None = None  # cumulative reflection push, if any

    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, prefix: str = "q") -> str:
        dim = self.states.shape[1]
        header = ["t"] + [f"{prefix}_{i}" for i in range(1, dim + 1)]
        if self.regulator is not None:
            header.append("regulator")
        lines = [",".join(header)]
        for k, t in enumerate(self.times):
            row = [repr(float(t))] + [repr(float(x)) for x in self.states[k]]
            if self.regulator is not None:
                row.append(repr(float(self.regulator[k])))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def project_to_simplex_order(q: np.ndarray) -> np.ndarray:
    """Clip into [0, 1] and force ``q`` non-increasing by a running minimum."""
    return np.minimum.accumulate(np.clip(q, 0.0, 1.0))


def is_fluid_state(q, tol: float = 0.0) -> bool:
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        return True
    return bool(q[0] <= 1 + tol and q[-1] >= -tol and np.all(np.diff(q) <= tol))


def _padded(q: np.ndarray) -> np.ndarray:
    # [q_0 = 1, q_1, ..., q_imax, q_{imax+1} = 0]
    return np.concatenate(([1.0], q, [0.0]))


def fluid_rhs_jsqd(q, lam: float, d: int) -> np.ndarray:
    """Mean-field drift of the power-of-d scheme."""
    p = _padded(np.asarray(q, dtype=float))
    pd = p**d
    return lam * (pd[:-2] - pd[1:-1]) - (p[1:-1] - p[2:])


def _min_queue_length(p: np.ndarray) -> int:
    """m(q) = min{i : q_{i+1} < 1} on a padded vector (p[0] = q_0 = 1)."""
    m = 0
    while m + 1 < len(p) and p[m + 1] >= 1.0:
        m += 1
    return m


def _assignment_weights(p: np.ndarray, lam: float, pools: bool) -> np.ndarray:
    """Fractions of arrivals joining stations with exactly i tasks (JSQ fluid).

    With server pools the lowest occupied level drains at rate m per pool,
    so it can absorb m times as many arrivals.
    """
    weights = np.zeros(len(p) - 1)
    m = _min_queue_length(p)
    factor = float(m) if pools else 1.0
    if m == 0:
        weights[0] = 1.0
        return weights
    if lam <= 0:
        # No arrivals: the split is irrelevant, keep it well defined.
        weights[m - 1] = 1.0
        return weights
    lower = min(factor * (1.0 - p[m + 1]) / lam, 1.0)
    weights[m - 1] = lower
    if m < len(weights):
        weights[m] = 1.0 - lower
    return weights


def fluid_rhs_jsq(q, lam: float) -> np.ndarray:
    """Right-derivative of the join-the-shortest-queue fluid limit."""
    p = _padded(np.asarray(q, dtype=float))
    w = _assignment_weights(p, lam, pools=False)
    return lam * w[:-1] - (p[1:-1] - p[2:])


def fluid_rhs_jsq_pool(q, lam: float, B: int | None = None) -> np.ndarray:
    """Right-derivative of the JSQ fluid limit for server pools (infinite-server dynamics).

    A pool with i tasks completes them at rate i, which both scales the
    departure term and the share of arrivals the lowest level can absorb.
    """
    q = np.asarray(q, dtype=float)
    if B is not None and lam >= B:
        raise ValueError(f"pool fluid limit needs lambda < B ({lam} >= {B})")
    p = _padded(q)
    w = _assignment_weights(p, lam, pools=True)
    i = np.arange(1, len(q) + 1)
    return lam * w[:-1] - i * (p[1:-1] - p[2:])


def _rk4_step(rhs: FluidRhs, q: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(q)
    k2 = rhs(q + 0.5 * h * k1)
    k3 = rhs(q + 0.5 * h * k2)
    k4 = rhs(q + h * k3)
    return q + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_fluid(rhs: FluidRhs, q0, t_end: float, step: float = 0.01,
                    sample_times=None, project: bool = True) -> Trajectory:
    """Fixed-step RK4 with projection back onto the ordered unit box after each step.

    The JSQ drifts switch at the boundary ``q_{m+1} = 1``; fixed steps
    through a right-derivative are fine there, so no event location is done.
    Validate accuracy by halving ``step``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    q = np.array(q0, dtype=float)
    if sample_times is None:
        sample_times = np.array([0.0, t_end])
    sample_times = np.asarray(sample_times, dtype=float)
    if np.any(np.diff(sample_times) < 0) or sample_times[0] < 0 or sample_times[-1] > t_end + 1e-12:
        raise ValueError("sample_times must be sorted within [0, t_end]")

    n_steps = int(math.ceil(t_end / step - 1e-9))
    out = np.empty((len(sample_times), q.size))
    k = 0
    t = 0.0
    for n in range(n_steps + 1):
        while k < len(sample_times) and sample_times[k] <= t + 1e-12:
            out[k] = q
            k += 1
        if n == n_steps:
            break
        h = min(step, t_end - t)
        q = _rk4_step(rhs, q, h)
        if project:
            q = project_to_simplex_order(q)
        t = min((n + 1) * step, t_end)
    while k < len(sample_times):
        out[k] = q
        k += 1
    return Trajectory(sample_times, out)


def default_imax_jsqd(lam: float, d: int) -> int:
    """Truncation index: first level whose fixed-point mass is below 1e-12, plus a margin."""
    if not 0 < lam < 1:
        return 1 + _TAIL_MARGIN
    i = 1
    while _jsqd_level(lam, d, i) >= _TAIL_CUTOFF:
        i += 1
        if i > 10_000:
            break
    return i + _TAIL_MARGIN


def _jsqd_level(lam: float, d: int, i: int) -> float:
    if d == 1:
        exponent = float(i)
    else:
        # (d^i - 1)/(d - 1) grows fast; once it is huge the power underflows anyway
        exponent = (d**i - 1) / (d - 1) if i * math.log(d) < 700 else math.inf
    with np.errstate(over="ignore", under="ignore"):
        return lam**exponent if exponent != math.inf else 0.0


def fixed_point_jsqd(lam: float, d: int, imax: int | None = None) -> np.ndarray:
    """Stationary fluid occupancy of power-of-d: q_i = lam^((d^i - 1)/(d - 1)).

    ``d = 1`` is random assignment, q_i = lam^i. Entries below 1e-300 are
    stored as exact zeros.
    """
    if not 0 <= lam < 1:
        raise ValueError("fixed point requires 0 <= lambda < 1")
    if d < 1:
        raise ValueError("d must be >= 1")
    if imax is None:
        imax = default_imax_jsqd(lam, d)
    q = np.array([_jsqd_level(lam, d, i) for i in range(1, imax + 1)])
    q[q < 1e-300] = 0.0
    return q


def fixed_point_jsq(lam: float, imax: int = 1 + _TAIL_MARGIN) -> np.ndarray:
    if not 0 <= lam < 1:
        raise ValueError("fixed point requires 0 <= lambda < 1")
    q = np.zeros(max(imax, 1))
    q[0] = lam
    return q


def pool_split(lam: float) -> tuple[int, float]:
    """Integral and fractional parts (K, f) of the per-pool load."""
    K = int(math.floor(lam))
    return K, lam - K


def fixed_point_pool(lam: float, B: int | None = None, imax: int | None = None) -> np.ndarray:
    """Fluid fixed point of JSQ with server pools: K ones, then f, then zeros."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if B is not None and lam >= B:
        raise ValueError(f"fixed point requires lambda < B ({lam} >= {B})")
    K, f = pool_split(lam)
    if imax is None:
        imax = B if B is not None else K + 1 + _TAIL_MARGIN
    q = np.zeros(imax)
    q[:K] = 1.0
    if K < imax:
        q[K] = f
    return q


def _euler_reflected(drift, qbar0, t_end, step, rng, noise_scale, noise, reflect,
                     sample_every):
    if step <= 0:
        raise ValueError("step must be positive")
    n_steps = int(round(t_end / step))
    x = np.array(qbar0, dtype=float)
    sqrt_h = math.sqrt(step)
    if noise:
        z = rng.standard_normal(n_steps)
    sample_every = max(1, int(sample_every))
    n_samples = n_steps // sample_every + 1
    times = np.empty(n_samples)
    states = np.empty((n_samples, x.size))
    reg_path = np.empty(n_samples)
    regulator = 0.0
    times[0], states[0], reg_path[0] = 0.0, x, 0.0
    k = 1
    for n in range(n_steps):
        dx = drift(x) * step
        if noise:
            dx[0] += noise_scale * sqrt_h * z[n]
        x = x + dx
        if reflect is not None:
            push = reflect(x)
            regulator += push
        if (n + 1) % sample_every == 0:
            times[k] = (n + 1) * step
            states[k] = x
            reg_path[k] = regulator
            k += 1
    return Trajectory(times[:k], states[:k], reg_path[:k])


def simulate_diffusion_jsq(beta: float, qbar0, t_end: float, step: float = 1e-3,
                           rng: np.random.Generator | None = None, noise: bool = True,
                           sample_every: int = 1) -> Trajectory:
    """Euler-Maruyama for the Halfin-Whitt diffusion limit of JSQ.

    Component 0 is the (non-positive) scaled number of idle servers, the
    rest are scaled counts of stations with 2, 3, ... tasks. Whenever an
    unconstrained step pushes component 0 above zero, the excess is removed,
    added to the regulator and injected into component 1 (arrivals that
    found no idle server).
    """
    qbar0 = np.asarray(qbar0, dtype=float)
    if qbar0.size < 2:
        raise ValueError("need at least two components")
    if qbar0[0] > 0 or np.any(qbar0[1:] < 0):
        raise ValueError("start must have qbar_1 <= 0 and qbar_i >= 0 for i >= 2")
    rng = rng if rng is not None else np.random.default_rng()

    def drift(x):
        nxt = np.append(x[1:], 0.0)
        dx = -(x - nxt)
        dx[0] = -beta - x[0] + x[1]
        return dx

    def reflect(x):
        if x[0] > 0:
            push = x[0]
            x[0] = 0.0
            x[1] += push
            return push
        return 0.0

    return _euler_reflected(drift, qbar0, t_end, step, rng, math.sqrt(2.0), noise, reflect,
                            sample_every)


def simulate_diffusion_pool(lam: float | None = None, *, case: str, t_end: float,
                            step: float = 1e-3, rng: np.random.Generator | None = None,
                            start=None, K: int | None = None, beta: float = 0.0,
                            noise: bool = True, sample_every: int = 1,
                            paths: int = 1) -> Trajectory:
    """Diffusion limits for JSQ with server pools.

    ``case="f>0"``: Ornstein-Uhlenbeck dX = -X dt + sqrt(2 lam) dW for the
    scaled excess of pools at level K+1. ``paths > 1`` integrates independent
    copies side by side (states then has one column per path).

    ``case="f=0"``: the pair (pools below K, pools above K) with regulator
    V_1 keeping the first component non-negative; every push also enters
    the second component.
    """
    rng = rng if rng is not None else np.random.default_rng()
    if step <= 0:
        raise ValueError("step must be positive")
    if case in ("f>0", "ou"):
        if lam is None or lam <= 0:
            raise ValueError("OU case needs lambda > 0")
        x0 = np.zeros(paths) if start is None else np.broadcast_to(np.asarray(start, float), (paths,)).copy()
        return _ou_paths(x0, t_end, step, math.sqrt(2.0 * lam), rng, noise, sample_every)
    if case in ("f=0", "reflected"):
        if K is None:
            if lam is None:
                raise ValueError("f=0 case needs K or lambda")
            K, f = pool_split(lam)
            if f != 0:
                raise ValueError("lambda is not integral; use case='f>0'")
        if K < 1:
            raise ValueError("K must be >= 1")
        x0 = np.zeros(2) if start is None else np.asarray(start, dtype=float)
        if x0[0] < 0 or x0[1] < 0:
            raise ValueError("start components must be non-negative")

        def drift(x):
            return np.array([-(x[0] + K * x[1]) + beta, -(K + 1) * x[1]])

        def reflect(x):
            if x[0] < 0:
                push = -x[0]
                x[0] = 0.0
                x[1] += push
                return push
            return 0.0

        return _euler_reflected(drift, x0, t_end, step, rng, math.sqrt(2.0 * K), noise, reflect,
                                sample_every)
    raise ValueError(f"unknown case {case!r}")


def _ou_paths(x0, t_end, step, sigma, rng, noise, sample_every) -> Trajectory:
    n_steps = int(round(t_end / step))
    sample_every = max(1, int(sample_every))
    x = x0.astype(float)
    scale = sigma * math.sqrt(step)
    n_samples = n_steps // sample_every + 1
    states = np.empty((n_samples, x.size))
    times = np.empty(n_samples)
    states[0], times[0] = x, 0.0
    k = 1
    chunk = 4096
    for start in range(0, n_steps, chunk):
        m = min(chunk, n_steps - start)
        z = rng.standard_normal((m, x.size)) if noise else np.zeros((m, x.size))
        for j in range(m):
            x = x - x * step + scale * z[j]
            n = start + j + 1
            if n % sample_every == 0:
                states[k], times[k] = x, n * step
                k += 1
    return Trajectory(times[:k], states[:k])


def heavy_traffic_jsqd_ode(qbar0, d: int, t_end: float, step: float = 0.01,
                           sample_times=None) -> Trajectory:
    """Deterministic limit of power-of-d in heavy traffic (qbar_i = (N - Q_i)/eta(N)).

    Linear system with qbar_0 = 0 and qbar_{imax+1} = 0 at the ends.
    """
    def rhs(x):
        prev = np.concatenate(([0.0], x[:-1]))
        nxt = np.append(x[1:], 0.0)
        return -d * (x - prev) - (x - nxt)

    return integrate_fluid(rhs, qbar0, t_end, step, sample_times, project=False)
