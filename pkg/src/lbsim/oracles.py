"""Closed-form queueing results used as ground truth for simulation runs."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

# Slack for the strict inequality in the r* scan; equal dispatcher loads hit
# the threshold exactly and must not be counted because of rounding.
_RSTAR_TOL = 1e-12


@dataclass(frozen=True)
class OracleResult:
    value: float
    formula_id: str
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MM1Metrics:
    p_wait: float
    mean_wait: float
    tail: tuple[float, ...]  # tail[i-1] = P(queue length >= i)

    def to_dict(self) -> dict:
        return {"p_wait": self.p_wait, "mean_wait": self.mean_wait, "tail": list(self.tail)}


@dataclass(frozen=True)
class ErlangC:
    prob_wait: float
    mean_wait: float
    n: int
    arrival_rate: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class QueueingLimit:
    r_star: int
    lambda2: float
    mean_wait: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MaxQueuePrediction:
    center: float
    law: str

    def to_dict(self) -> dict:
        return asdict(self)


def mm1_metrics(rho: float, imax: int = 20) -> MM1Metrics:
    """Stationary metrics of one M/M/1 queue at utilisation ``rho``.

    Under random assignment every server is an independent M/M/1 queue, so
    these are also the per-server values of that policy.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"M/M/1 requires 0 <= rho < 1, got {rho}")
    tail = tuple(rho**i for i in range(1, imax + 1))
    return MM1Metrics(p_wait=rho, mean_wait=rho / (1.0 - rho), tail=tail)


def erlang_b(n: int, offered: float) -> float:
    """Erlang-B loss probability via the standard stable recursion."""
    if n < 0:
        raise ValueError("n must be non-negative")
    b = 1.0
    for k in range(1, n + 1):
        b = offered * b / (k + offered * b)
    return b


def erlang_c(n: int, arrival_rate: float) -> ErlangC:
    """Probability of waiting and mean wait in an M/M/n queue with unit service rate.

    Computed from the Erlang-B recursion, which stays well conditioned for
    n in the hundreds of thousands where factorial sums overflow.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if arrival_rate < 0:
        raise ValueError("arrival rate must be non-negative")
    if arrival_rate >= n:
        raise ValueError(f"M/M/{n} is unstable for arrival rate {arrival_rate}")
    if arrival_rate == 0:
        return ErlangC(0.0, 0.0, n, 0.0)
    b = erlang_b(n, arrival_rate)
    c = n * b / (n - arrival_rate * (1.0 - b))
    return ErlangC(prob_wait=c, mean_wait=c / (n - arrival_rate), n=n, arrival_rate=arrival_rate)


def _check_alpha(alpha: Sequence[float], R: int) -> tuple[float, ...]:
    alpha = tuple(float(a) for a in alpha)
    if len(alpha) != R:
        raise ValueError(f"alpha has {len(alpha)} entries, expected R={R}")
    if any(a <= 0 for a in alpha):
        raise ValueError("alpha entries must be positive")
    if abs(sum(alpha) - 1.0) > 1e-9:
        raise ValueError("alpha must sum to 1")
    if any(alpha[i] < alpha[i + 1] - 1e-12 for i in range(R - 1)):
        raise ValueError("alpha must be non-increasing")
    return alpha


def blocking_limit(R: int, lam: float, alpha: Sequence[float]) -> OracleResult:
    """Many-server blocking probability of JIQ with R dispatchers (blocking scenario).

    The limit is max{1 - R*alpha_R, 1 - 1/lam}, clamped at zero.
    """
    alpha = _check_alpha(alpha, R)
    if lam <= 0:
        raise ValueError("lambda must be positive")
    value = max(1.0 - R * alpha[-1], 1.0 - 1.0 / lam, 0.0)
    return OracleResult(value, "jiq_multi_dispatcher_blocking",
                        {"R": R, "lambda": lam, "alpha": list(alpha)})


def queueing_limit(R: int, lam: float, alpha: Sequence[float]) -> QueueingLimit:
    """Limiting mean wait of JIQ with R dispatchers when token-less arrivals are
    forwarded to a random server.

    ``lambda2`` is the rate at which tasks get forwarded at random; the wait
    is that of an M/M/1 queue at that load.
    """
    alpha = _check_alpha(alpha, R)
    if not 0 < lam < 1:
        raise ValueError("queueing scenario requires 0 < lambda < 1")

    def threshold(r: int) -> float:
        return (1.0 - lam * sum(alpha[:r])) / (1.0 - lam * r / R) / R

    r_star = 0
    for r in range(1, R + 1):
        if alpha[r - 1] > threshold(r) + _RSTAR_TOL:
            r_star = r
    lambda2 = 1.0 - (1.0 - lam * sum(alpha[:r_star])) / (1.0 - lam * r_star / R)
    lambda2 = max(lambda2, 0.0)
    return QueueingLimit(r_star=r_star, lambda2=lambda2, mean_wait=lambda2 / (1.0 - lambda2))


def enhancement_b_threshold(R: int, lam: float, alpha: Sequence[float]) -> float:
    """Token exchange rate above which the skewed-load penalty vanishes asymptotically.

    Asymptotic sufficiency only; no finite-N guarantee.
    """
    alpha = _check_alpha(alpha, R)
    if not 0 < lam < 1:
        raise ValueError("requires 0 < lambda < 1")
    return max(lam / (1.0 - lam) * (alpha[0] * R - 1.0), 0.0)


def maxq_prediction(n: int, d: int, lam: float | None = None) -> MaxQueuePrediction:
    """Leading-order stationary maximum queue length (the O(1) term is dropped).

    For d >= 2 the max concentrates around log log n / log d; for random
    assignment it grows like log n / log(1/lam) and does not concentrate.
    """
    if n < 3:
        raise ValueError("n must be >= 3")
    if d < 1:
        raise ValueError("d must be >= 1")
    if d == 1:
        if lam is None or not 0 < lam < 1:
            raise ValueError("random assignment prediction needs 0 < lambda < 1")
        return MaxQueuePrediction(math.log(n) / math.log(1.0 / lam), "log_n")
    return MaxQueuePrediction(math.log(math.log(n)) / math.log(d), "loglog_n")
