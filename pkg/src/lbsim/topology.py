"""Undirected server graphs and well-connectedness diagnostics.

``com(U)`` counts vertices outside the closed neighbourhood of ``U``;
``dis1``/``dis2`` take the worst case over all large enough vertex sets and
measure how far a graph is from behaving like a clique for load balancing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

EXACT_DIS_MAX_N = 24


@dataclass(frozen=True)
class Topology:
    n: int
    adjacency: tuple[tuple[int, ...], ...]
    kind: str = "custom"

    def __post_init__(self):
        if len(self.adjacency) != self.n:
            raise ValueError("adjacency must have one neighbour list per vertex")
        for u, nbrs in enumerate(self.adjacency):
            if list(nbrs) != sorted(set(nbrs)):
                raise ValueError(f"neighbour list of {u} must be sorted and duplicate-free")
            for v in nbrs:
                if v == u:
                    raise ValueError(f"self-loop at {u}")
                if not 0 <= v < self.n:
                    raise ValueError(f"vertex {v} out of range")

    def neighbors(self, u: int) -> tuple[int, ...]:
        return self.adjacency[u]

    def degree(self, u: int) -> int:
        return len(self.adjacency[u])

    def degrees(self) -> list[int]:
        return [len(a) for a in self.adjacency]

    @property
    def n_edges(self) -> int:
        return sum(self.degrees()) // 2

    def is_complete(self) -> bool:
        return all(len(a) == self.n - 1 for a in self.adjacency)

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u, nbrs in enumerate(self.adjacency) for v in nbrs if u < v]

    def with_edges(self, extra: Iterable[tuple[int, int]]) -> "Topology":
        """Supergraph with the given edges added."""
        return from_edges(self.n, list(self.edges()) + list(extra), kind=self.kind)


def from_edges(n: int, edges: Iterable[tuple[int, int]], kind: str = "custom") -> Topology:
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for u, v in edges:
        if u == v:
            raise ValueError(f"self-loop at {u}")
        if not (0 <= u < n and 0 <= v < n):
            raise ValueError(f"edge ({u}, {v}) out of range for n={n}")
        nbrs[u].add(v)
        nbrs[v].add(u)
    return Topology(n, tuple(tuple(sorted(s)) for s in nbrs), kind)


def _check_n(n: int) -> None:
    if n < 1:
        raise ValueError("n must be >= 1")


def _check_p(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must lie in [0, 1], got {p}")


def make_clique(n: int) -> Topology:
    _check_n(n)
    return Topology(n, tuple(tuple(v for v in range(n) if v != u) for u in range(n)), "clique")


def make_ring(n: int) -> Topology:
    _check_n(n)
    if n < 3:
        # a "ring" on 2 vertices is a single edge
        return from_edges(n, [(0, 1)] if n == 2 else [], kind="ring")
    return from_edges(n, [(u, (u + 1) % n) for u in range(n)], kind="ring")


def make_edgeless(n: int) -> Topology:
    _check_n(n)
    return Topology(n, tuple(() for _ in range(n)), "edgeless")


def _from_upper_mask(n: int, mask: np.ndarray, kind: str) -> Topology:
    iu, ju = np.nonzero(mask)
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for u, v in zip(iu.tolist(), ju.tolist()):
        nbrs[u].append(v)
        nbrs[v].append(u)
    return Topology(n, tuple(tuple(sorted(a)) for a in nbrs), kind)


def make_er(n: int, p: float, rng: np.random.Generator) -> Topology:
    """Erdos-Renyi G(n, p): each of the n(n-1)/2 edges present independently."""
    _check_n(n)
    _check_p(p)
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return _from_upper_mask(n, upper, "er")


def make_inhomogeneous(n: int, p_uv: Callable[[int, int], float] | np.ndarray,
                       rng: np.random.Generator) -> Topology:
    """Random graph where u~v with probability p_uv (callable or symmetric matrix)."""
    _check_n(n)
    if callable(p_uv):
        probs = np.zeros((n, n))
        for u in range(n):
            for v in range(u + 1, n):
                probs[u, v] = p_uv(u, v)
    else:
        probs = np.asarray(p_uv, dtype=float)
        if probs.shape != (n, n):
            raise ValueError("probability matrix must be n x n")
        if not np.allclose(probs, probs.T):
            raise ValueError("probability matrix must be symmetric")
    upper = np.triu(probs, k=1)
    if np.any(upper < 0) or np.any(upper > 1):
        raise ValueError("edge probabilities must lie in [0, 1]")
    return _from_upper_mask(n, np.triu(rng.random((n, n)) < upper, k=1), "inhomogeneous")


def load_edge_list(path: str | Path, n: int | None = None) -> Topology:
    """Read ``u v`` pairs (0-indexed, one per line); ``#`` starts a comment."""
    edges = []
    top = -1
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'u v', got {raw!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: vertex ids must be integers") from None
        if u < 0 or v < 0:
            raise ValueError(f"{path}:{lineno}: vertex ids must be non-negative")
        edges.append((u, v))
        top = max(top, u, v)
    if n is None:
        n = top + 1
    return from_edges(n, edges, kind="custom")


def closed_neighborhood(top: Topology, U: Iterable[int]) -> set[int]:
    covered = set()
    for u in U:
        covered.add(u)
        covered.update(top.adjacency[u])
    return covered


def com(top: Topology, U: Iterable[int]) -> int:
    """Number of vertices neither in ``U`` nor adjacent to it."""
    U = list(U)
    for u in U:
        if not 0 <= u < top.n:
            raise ValueError(f"vertex {u} out of range")
    return top.n - len(closed_neighborhood(top, U))


@dataclass(frozen=True)
class DisResult:
    value: int
    exact: bool  # False: sampled lower bound
    min_size: int

    def __int__(self) -> int:
        return self.value


def _size_threshold(scale: float, eps: float) -> int:
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    return max(1, math.ceil(eps * scale - 1e-12))


def _dis_exact(top: Topology, k: int) -> int:
    # COM is non-increasing in U, so the sup over |U| >= k sits at |U| = k.
    n = top.n
    if k > n:
        return 0
    masks = [(1 << u) | sum(1 << v for v in top.adjacency[u]) for u in range(n)]
    full = (1 << n) - 1
    best = 0
    for U in combinations(range(n), k):
        cover = 0
        for u in U:
            cover |= masks[u]
            if cover == full:
                break
        uncovered = n - bin(cover).count("1")
        if uncovered > best:
            best = uncovered
            if best == n - k:  # cannot do better than U covering only itself
                return best
    return best


def _dis_sampled(top: Topology, k: int, rng: np.random.Generator, restarts: int) -> int:
    """Lower bound from random subsets and a greedy 'cover as little as possible' search."""
    n = top.n
    if k > n:
        return 0
    best = 0
    closed = [set(top.adjacency[u]) | {u} for u in range(n)]
    for _ in range(restarts):
        U = rng.choice(n, size=k, replace=False)
        best = max(best, com(top, U.tolist()))
    for _ in range(restarts):
        start = int(rng.integers(n))
        covered = set(closed[start])
        chosen = {start}
        while len(chosen) < k:
            # prefer vertices already covered whose neighbourhood adds the least
            order = rng.permutation(n)
            pick, cost = -1, n + 1
            for v in order.tolist():
                if v in chosen:
                    continue
                c = len(closed[v] - covered)
                if c < cost:
                    pick, cost = v, c
                    if c == 0:
                        break
            chosen.add(pick)
            covered |= closed[pick]
        best = max(best, n - len(covered))
    return best


def _dis(top: Topology, k: int, exact: bool | None, rng, restarts: int) -> DisResult:
    if exact is None:
        exact = top.n <= EXACT_DIS_MAX_N
    if exact:
        if top.n > EXACT_DIS_MAX_N:
            raise ValueError(f"exact DIS is limited to n <= {EXACT_DIS_MAX_N} (got {top.n})")
        return DisResult(_dis_exact(top, k), True, k)
    rng = rng if rng is not None else np.random.default_rng(0)
    return DisResult(_dis_sampled(top, k, rng, restarts), False, k)


def dis1(top: Topology, eps: float, exact: bool | None = None,
         rng: np.random.Generator | None = None, restarts: int = 20) -> DisResult:
    """Worst-case COM(U) over sets with |U| >= ceil(eps * n)."""
    return _dis(top, _size_threshold(top.n, eps), exact, rng, restarts)


def dis2(top: Topology, eps: float, exact: bool | None = None,
         rng: np.random.Generator | None = None, restarts: int = 20) -> DisResult:
    """Worst-case COM(U) over sets with |U| >= ceil(eps * sqrt(n))."""
    return _dis(top, _size_threshold(math.sqrt(top.n), eps), exact, rng, restarts)


@dataclass(frozen=True)
class DegreeReport:
    d_min: int
    d_max: int
    d_mean: float
    n_optimal_hint: bool
    sqrtn_optimal_hint: bool

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def min_degree_check(top: Topology) -> DegreeReport:
    """Instance-level reading of the minimum-degree sufficient conditions.

    A single graph cannot show ``N - d_min = o(N)``; the hints compare the
    deficit ``N - d_min`` with sqrt(N) (fluid scale) and N**0.25 (diffusion
    scale) as finite-size stand-ins. Diagnostic only.
    """
    degs = top.degrees()
    n = top.n
    d_min = min(degs) if degs else 0
    deficit = n - d_min
    return DegreeReport(
        d_min=d_min,
        d_max=max(degs) if degs else 0,
        d_mean=float(sum(degs)) / n if n else 0.0,
        n_optimal_hint=deficit <= math.sqrt(n),
        sqrtn_optimal_hint=deficit <= n**0.25,
    )


def degree_summary(degrees: Sequence[int]) -> dict:
    arr = np.asarray(degrees)
    return {"min": int(arr.min()), "max": int(arr.max()), "mean": float(arr.mean())}
