"""Estimators for simulation output: waits, blocking, occupancy, overhead.

Waiting-time metrics use batch means over arrival-time batches of the
measurement window; cross-replication summaries use a Student t interval.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats as sps

DEFAULT_BATCHES = 20
DEFAULT_WARMUP_FRACTION = 0.2
CONFIDENCE = 0.95


@dataclass(frozen=True)
class Estimate:
    value: float
    ci_half: float
    reliable: bool = True

    def covers(self, x: float) -> bool:
        return abs(self.value - x) <= self.ci_half

    def to_dict(self) -> dict:
        return asdict(self)


ZERO = Estimate(0.0, 0.0, True)


def t_half_width(values: Sequence[float], confidence: float = CONFIDENCE) -> float:
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 2:
        return math.inf if n == 1 else 0.0
    sd = float(x.std(ddof=1))
    if sd == 0.0:
        return 0.0
    return float(sps.t.ppf(0.5 + confidence / 2, n - 1)) * sd / math.sqrt(n)


def mean_ci(values: Sequence[float], confidence: float = CONFIDENCE) -> Estimate:
    """Mean of i.i.d. values (e.g. one per replication) with a t interval."""
    x = np.asarray(values, dtype=float)
    if len(x) == 0:
        return ZERO
    return Estimate(float(x.mean()), t_half_width(x, confidence), len(x) >= 2)


def batch_means_ci(numer: Sequence[float], denom: Sequence[float],
                   min_batches: int = DEFAULT_BATCHES,
                   confidence: float = CONFIDENCE) -> Estimate:
    """Ratio estimator sum(numer)/sum(denom) with a batch-means interval.

    Batches with an empty denominator carry no information and are dropped;
    fewer than ``min_batches`` usable batches marks the interval unreliable.
    """
    num = np.asarray(numer, dtype=float)
    den = np.asarray(denom, dtype=float)
    total = den.sum()
    if total == 0:
        return ZERO
    point = float(num.sum() / total)
    ok = den > 0
    ratios = num[ok] / den[ok]
    half = t_half_width(ratios, confidence) if len(ratios) >= 2 else math.inf
    return Estimate(point, half, int(ok.sum()) >= min_batches)


class BatchAccumulator:
    """Per-batch sums for task-level metrics, keyed by arrival time."""

    def __init__(self, start: float, end: float, n_batches: int = DEFAULT_BATCHES):
        if end <= start:
            raise ValueError("measurement window must have positive length")
        self.start = start
        self.end = end
        self.n_batches = n_batches
        self.inv_len = n_batches / (end - start)
        self.arrivals = [0] * n_batches
        self.blocked = [0] * n_batches
        self.served = [0] * n_batches
        self.waited = [0] * n_batches
        self.wait_sum = [0.0] * n_batches
        self.resp_sum = [0.0] * n_batches

    def batch_of(self, t: float) -> int:
        b = int((t - self.start) * self.inv_len)
        return b if b < self.n_batches else self.n_batches - 1

    def record_wait(self, b: int, wait: float, response: float) -> None:
        self.served[b] += 1
        self.wait_sum[b] += wait
        self.resp_sum[b] += response
        if wait > 0.0:
            self.waited[b] += 1

    def mean_wait(self) -> Estimate:
        return batch_means_ci(self.wait_sum, self.served)

    def p_wait(self) -> Estimate:
        return batch_means_ci(self.waited, self.served)

    def mean_response(self) -> Estimate:
        return batch_means_ci(self.resp_sum, self.served)

    def p_block(self) -> Estimate:
        return batch_means_ci(self.blocked, self.arrivals)

    @property
    def total_arrivals(self) -> int:
        return sum(self.arrivals)

    @property
    def total_blocked(self) -> int:
        return sum(self.blocked)

    @property
    def total_served(self) -> int:
        return sum(self.served)


@dataclass
class RunSummary:
    mean_wait: Estimate
    p_wait: Estimate
    p_block: Estimate
    mean_response: Estimate
    q_stationary: list[float]
    max_queue: int
    max_queue_peak: int
    messages_per_task: float
    arrivals: int
    blocked: int
    served: int
    mean_tasks: float  # time-average number of tasks in the system
    mean_waiting: float  # time-average number of tasks waiting (single-server)
    window: tuple[float, float]
    seed: int
    config_hash: str = ""
    ci_reliable: bool = True
    qbar_path: list[list[float]] | None = None
    sample_times: list[float] | None = None
    extra: dict = field(default_factory=dict)

    @property
    def throughput(self) -> float:
        t0, t1 = self.window
        return self.arrivals / (t1 - t0) if t1 > t0 else 0.0

    def little_gap(self) -> float:
        """Relative gap |L_q - lambda_eff W| / max(L_q, lambda_eff W).

        Near zero up to edge effects of the window; 0 when nothing waits.
        """
        t0, t1 = self.window
        rate = (self.arrivals - self.blocked) / (t1 - t0) if t1 > t0 else 0.0
        lw = rate * self.mean_wait.value
        scale = max(self.mean_waiting, lw)
        return abs(self.mean_waiting - lw) / scale if scale > 0 else 0.0

    def metrics(self) -> dict[str, tuple[float, float]]:
        """Scalar metrics as (value, ci_half), the unit of a tidy CSV row."""
        out = {
            "mean_wait": (self.mean_wait.value, self.mean_wait.ci_half),
            "p_wait": (self.p_wait.value, self.p_wait.ci_half),
            "p_block": (self.p_block.value, self.p_block.ci_half),
            "mean_response": (self.mean_response.value, self.mean_response.ci_half),
            "max_queue": (float(self.max_queue), 0.0),
            "max_queue_peak": (float(self.max_queue_peak), 0.0),
            "messages_per_task": (self.messages_per_task, 0.0),
            "mean_tasks": (self.mean_tasks, 0.0),
        }
        for i, q in enumerate(self.q_stationary, start=1):
            out[f"q_{i}"] = (q, 0.0)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def fluid_occupancy_average(times: Sequence[float], occupancy: Sequence[Sequence[int]],
                            n: int, t_start: float, t_end: float) -> np.ndarray:
    """Time average of Q_i/N for a piecewise-constant path.

    ``occupancy[k]`` holds from ``times[k]`` until ``times[k+1]`` (the last
    one until ``t_end``). Rows may have different lengths; missing entries
    are zero.
    """
    if t_end <= t_start:
        raise ValueError("t_end must exceed t_start")
    width = max((len(r) for r in occupancy), default=0)
    acc = np.zeros(width)
    bounds = list(times[1:]) + [t_end]
    for t0, t1, row in zip(times, bounds, occupancy):
        a, b = max(t0, t_start), min(t1, t_end)
        if b > a and len(row):
            acc[: len(row)] += np.asarray(row, dtype=float) * (b - a)
    return acc / (n * (t_end - t_start))


def diffusion_scale(occupancy: Sequence[int], n: int) -> np.ndarray:
    """Centre and scale an occupancy vector: -(N - Q_1)/sqrt(N), Q_i/sqrt(N) for i >= 2."""
    q = np.asarray(occupancy, dtype=float)
    out = q / math.sqrt(n)
    if len(q):
        out[0] = -(n - q[0]) / math.sqrt(n)
    else:
        out = np.array([-math.sqrt(n)])
    return out


def message_count(messages: int, tasks: int) -> float:
    """Signalling overhead per task."""
    return messages / tasks if tasks > 0 else 0.0


def aggregate(summaries: Sequence[RunSummary]) -> dict[str, Estimate]:
    """Across-replication mean and t interval for every scalar metric."""
    if not summaries:
        return {}
    keys: dict[str, list[float]] = {}
    for s in summaries:
        for k, (v, _) in s.metrics().items():
            keys.setdefault(k, []).append(v)
    n = len(summaries)
    # q_i missing from a replication means that level was never reached
    return {k: mean_ci(v + [0.0] * (n - len(v))) for k, v in keys.items()}
