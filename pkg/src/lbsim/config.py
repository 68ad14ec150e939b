"""Experiment configuration files.

A config is a YAML mapping; see README for the full grammar. Errors point
at the offending line of the file.
"""

from __future__ import annotations

import ast
import hashlib
import json
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import policies as pol
from .engine import ServerPool, SingleServerQueue
from .topology import Topology, load_edge_list, make_clique, make_edgeless, make_er, make_ring


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


# ---------------------------------------------------------------- YAML with lines

class _LineDict(dict):
    line: int = 0
    key_lines: dict


class _LineList(list):
    line: int = 0


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _LineDict()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for knode, vnode in node.value:
        key = loader.construct_object(knode, deep=True)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", knode.start_mark.line + 1)
        out[key] = loader.construct_object(vnode, deep=True)
        out.key_lines[key] = knode.start_mark.line + 1
    return out


def _construct_sequence(loader, node):
    out = _LineList(loader.construct_object(v, deep=True) for v in node.value)
    out.line = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_plain(v) for v in x]
    return x


# ---------------------------------------------------------------- expressions over N

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.FloorDiv: operator.floordiv, ast.Pow: operator.pow,
           ast.Mod: operator.mod}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"log": math.log, "log2": math.log2, "log10": math.log10, "sqrt": math.sqrt,
          "floor": math.floor, "ceil": math.ceil, "min": min, "max": max, "round": round,
          "exp": math.exp}
_CONSTS = {"pi": math.pi, "e": math.e}


def eval_expr(expr: str, N: int) -> float:
    """Evaluate an arithmetic expression in ``N`` (no names beyond a small math set)."""
    try:
        tree = ast.parse(str(expr), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {expr!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name):
            if node.id == "N":
                return N
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            raise ValueError(f"unknown name {node.id!r} in {expr!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](ev(node.operand))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and not node.keywords):
            return _FUNCS[node.func.id](*[ev(a) for a in node.args])
        raise ValueError(f"unsupported syntax in expression {expr!r}")

    return ev(tree)


# ---------------------------------------------------------------- rules

@dataclass(frozen=True)
class LoadRule:
    kind: str  # fixed_per_server | fluid | halfin_whitt | custom
    value: float | str

    def arrival_rate(self, N: int) -> float:
        if self.kind in ("fixed_per_server", "fluid"):
            return float(self.value) * N
        if self.kind == "halfin_whitt":
            return N - float(self.value) * math.sqrt(N)
        return float(eval_expr(self.value, N))

    def per_server(self, N: int) -> float:
        return self.arrival_rate(N) / N


@dataclass(frozen=True)
class DRule:
    kind: str  # const | log | pow | custom
    value: float | str | None = None

    def d(self, N: int) -> int:
        if self.kind == "const":
            d = int(self.value)
        elif self.kind == "log":
            d = math.floor(math.log(N))
        elif self.kind == "pow":
            d = math.floor(N ** float(self.value) + 1e-9)
        else:
            d = math.floor(eval_expr(self.value, N) + 1e-9)
        return max(1, min(d, N))


@dataclass
class PolicyEntry:
    name: str
    params: dict
    label: str
    line: int


@dataclass
class ExperimentConfig:
    policies: list[PolicyEntry]
    n_list: list[int]
    load: LoadRule
    horizon: float
    warmup: float | None
    replications: int
    seed: int
    dynamics: Any = field(default_factory=SingleServerQueue)
    d_rule: DRule | None = None
    topology: dict | None = None
    dispatchers: pol.MultiDispatcherSpec | None = None
    n_batches: int = 20
    output: str | None = None
    raw: dict = field(default_factory=dict)
    source: str = "<config>"
    base_dir: Path = field(default_factory=Path.cwd)

    def hash(self) -> str:
        blob = json.dumps(_plain(self.raw), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def cell_seed(self, N: int, rep: int) -> int:
        # shared by every policy in the cell: common random numbers across policies
        ss = np.random.SeedSequence([self.seed, N, rep])
        return int(ss.generate_state(1, np.uint64)[0])

    def d_for(self, entry: PolicyEntry, N: int) -> int | None:
        if "d" in entry.params:
            # an explicit d is taken as given (validation rejects d > N); only
            # d_rule output is clamped into [1, N]
            return int(math.floor(_param(entry.params["d"], N) + 1e-9))
        if self.d_rule is not None and entry.name in _D_POLICIES:
            return self.d_rule.d(N)
        return None

    def build_policy(self, entry: PolicyEntry, N: int) -> pol.PolicySpec:
        p = entry.params
        name = entry.name
        if name in _D_POLICIES:
            d = self.d_for(entry, N)
            if d is None:
                raise ConfigError(f"policy {name!r} needs 'd' or a top-level d_rule",
                                  entry.line, self.source)
            if name == "jsqd":
                return pol.JSQd(d, bool(p.get("replacement", False)))
            if name == "redundancy":
                return pol.RedundancyD(d, p.get("abort", pol.ON_START))
            return pol.RSQ(d)
        if name == "cjsq":
            return pol.CJSQ(int(_param(p["n"], N)))
        if name == "sparse_feedback":
            return pol.SparseFeedback(float(_param(p["update_rate"], N)),
                                      p.get("report_mode", pol.FULL))
        return _SIMPLE[name]()

    def build_topology(self, N: int, seed: int) -> Topology | None:
        t = self.topology
        if t is None:
            return None
        kind = t["kind"]
        if kind == "clique":
            return make_clique(N)
        if kind == "ring":
            return make_ring(N)
        if kind == "edgeless":
            return make_edgeless(N)
        if kind == "er":
            p = float(_param(t["p"], N))
            rng = np.random.default_rng(np.random.SeedSequence([seed, 0x70]))
            return make_er(N, p, rng)
        path = Path(t["path"])
        if not path.is_absolute():
            path = self.base_dir / path
        return load_edge_list(path, N)


_D_POLICIES = {"jsqd", "redundancy", "rsq"}
_SIMPLE = {"random": pol.Random, "round_robin": pol.RoundRobin, "jsq": pol.JSQ,
           "jsw": pol.JSW, "jiq": pol.JIQ, "i1f": pol.I1F, "graph_jsq": pol.GraphJSQ}
POLICY_NAMES = sorted(set(_SIMPLE) | _D_POLICIES | {"cjsq", "sparse_feedback"})
_POLICY_PARAMS = {
    "jsqd": {"d", "replacement"}, "redundancy": {"d", "abort"}, "rsq": {"d"},
    "cjsq": {"n"}, "sparse_feedback": {"update_rate", "report_mode"},
}


def _param(v, N):
    return eval_expr(v, N) if isinstance(v, str) else v


# ---------------------------------------------------------------- parsing

_TOP_KEYS = {"policy", "policies", "dynamics", "N", "load", "d_rule", "topology", "dispatchers",
             "replications", "horizon", "warmup", "seed", "output", "batches", "units"}


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    return parse_config(text, source=str(path), base_dir=path.parent)


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> ExperimentConfig:
    try:
        raw = yaml.load(text, Loader=_Loader)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[1], exc.line, source) from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", line, source) from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", 1, source)
    return _Parser(raw, source, base_dir or Path.cwd()).parse()


class _Parser:
    def __init__(self, raw: dict, source: str, base_dir: Path):
        self.raw = raw
        self.source = source
        self.base_dir = base_dir

    def fail(self, msg: str, node=None, key=None):
        line = None
        if isinstance(node, _LineDict) and key is not None:
            line = node.key_lines.get(key, node.line)
        elif node is not None:
            line = getattr(node, "line", None)
        raise ConfigError(msg, line, self.source)

    def need(self, node: dict, key: str, where: str):
        if key not in node:
            self.fail(f"missing required key '{key}' in {where}", node)
        return node[key]

    def number(self, node, key, *, positive=False, nonneg=False, integer=False, allow_expr=False):
        v = node[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            if allow_expr and isinstance(v, str):
                try:
                    eval_expr(v, 100)
                except (ValueError, ZeroDivisionError, TypeError) as exc:
                    self.fail(f"'{key}': {exc}", node, key)
                return v
            self.fail(f"'{key}' must be a number, got {v!r}", node, key)
        if integer and int(v) != v:
            self.fail(f"'{key}' must be an integer, got {v!r}", node, key)
        if positive and not v > 0:
            self.fail(f"'{key}' must be positive, got {v!r}", node, key)
        if nonneg and v < 0:
            self.fail(f"'{key}' must be non-negative, got {v!r}", node, key)
        return int(v) if integer else v

    def mapping(self, node, key):
        v = node[key]
        if not isinstance(v, dict):
            self.fail(f"'{key}' must be a mapping", node, key)
        return v

    def parse(self) -> ExperimentConfig:
        r = self.raw
        for k in r:
            if k not in _TOP_KEYS:
                self.fail(f"unknown key '{k}'", r, k)
        if "policy" in r and "policies" in r:
            self.fail("give either 'policy' or 'policies', not both", r, "policies")
        if "policy" in r:
            entries = [self.policy(r["policy"], r, "policy")]
        else:
            lst = self.need(r, "policies", "config")
            if not isinstance(lst, list) or not lst:
                self.fail("'policies' must be a non-empty list", r, "policies")
            entries = [self.policy(p, lst, None) for p in lst]
        labels = [e.label for e in entries]
        if len(set(labels)) != len(labels):
            self.fail("policy labels must be unique (add 'label:' to tell them apart)", r,
                      "policies")

        n_list = self.n_list(r)
        load = self.load(r)
        horizon = self.number(r, "horizon", positive=True) if "horizon" in r else \
            self.fail("missing required key 'horizon' in config", r)
        warmup = self.number(r, "warmup", nonneg=True) if "warmup" in r else None
        if warmup is not None and warmup >= horizon:
            self.fail(f"warmup ({warmup}) must be below horizon ({horizon})", r, "warmup")
        reps = self.number(r, "replications", positive=True, integer=True) if "replications" in r else 1
        seed = self.number(r, "seed", nonneg=True, integer=True) if "seed" in r else 0
        batches = self.number(r, "batches", integer=True) if "batches" in r else 20
        if batches < 2:
            self.fail("'batches' must be >= 2", r, "batches")
        if "units" in r and r["units"] != "mean_service_time":
            self.fail("'units' must be 'mean_service_time' (times are in mean service times)",
                      r, "units")
        cfg = ExperimentConfig(
            policies=entries, n_list=n_list, load=load, horizon=float(horizon),
            warmup=None if warmup is None else float(warmup), replications=reps, seed=seed,
            dynamics=self.dynamics(r), d_rule=self.d_rule(r), topology=self.topology(r),
            dispatchers=self.dispatchers(r), n_batches=batches, output=r.get("output"),
            raw=r, source=self.source, base_dir=self.base_dir,
        )
        self.cross_checks(cfg)
        return cfg

    def policy(self, p, parent, key) -> PolicyEntry:
        line = getattr(p, "line", getattr(parent, "line", None))
        if isinstance(p, str):
            p = _LineDict(name=p)
            p.line, p.key_lines = line, {}
        if not isinstance(p, dict):
            self.fail("a policy must be a name or a mapping with 'name'", parent, key)
        name = self.need(p, "name", "policy")
        if name not in POLICY_NAMES:
            self.fail(f"unknown policy {name!r}; expected one of {', '.join(POLICY_NAMES)}", p, "name")
        allowed = _POLICY_PARAMS.get(name, set()) | {"name", "label"}
        for k in p:
            if k not in allowed:
                self.fail(f"policy {name!r} takes no parameter '{k}'", p, k)
        params = {k: v for k, v in p.items() if k not in ("name", "label")}
        for k in ("d", "n", "update_rate"):
            if k in params:
                self.number(p, k, positive=(k != "n"), nonneg=True, allow_expr=True)
        if name == "cjsq" and "n" not in params:
            self.fail("policy 'cjsq' needs 'n'", p, "name")
        if name == "sparse_feedback" and "update_rate" not in params:
            self.fail("policy 'sparse_feedback' needs 'update_rate'", p, "name")
        if "abort" in params and params["abort"] not in (pol.ON_START, pol.ON_COMPLETE):
            self.fail(f"'abort' must be {pol.ON_START} or {pol.ON_COMPLETE}", p, "abort")
        if "report_mode" in params and params["report_mode"] not in (pol.FULL, pol.ZERO_ONLY):
            self.fail(f"'report_mode' must be {pol.FULL} or {pol.ZERO_ONLY}", p, "report_mode")
        return PolicyEntry(name, dict(params), str(p.get("label", name)), p.line)

    def n_list(self, r) -> list[int]:
        v = self.need(r, "N", "config")
        if isinstance(v, int) and not isinstance(v, bool):
            vals = [v]
        elif isinstance(v, list):
            vals = v
        elif isinstance(v, dict) and "range" in v:
            rg = v["range"]
            if not (isinstance(rg, list) and len(rg) == 3 and all(isinstance(x, int) for x in rg)):
                self.fail("'range' must be [start, stop, step] integers (stop inclusive)", v, "range")
            if rg[2] <= 0:
                self.fail("range step must be positive", v, "range")
            vals = list(range(rg[0], rg[1] + 1, rg[2]))
        else:
            self.fail("'N' must be an integer, a list, or {range: [start, stop, step]}", r, "N")
        if not vals:
            self.fail("'N' is empty", r, "N")
        for x in vals:
            if isinstance(x, bool) or not isinstance(x, int) or x < 1:
                self.fail(f"every N must be a positive integer, got {x!r}", r, "N")
        return list(vals)

    def load(self, r) -> LoadRule:
        node = self.mapping(r, "load") if "load" in r else self.fail("missing required key 'load'", r)
        rule = self.need(node, "rule", "load")
        if rule in ("fixed_per_server", "fluid"):
            self.need(node, "lambda", f"load rule {rule}")
            return LoadRule(rule, float(self.number(node, "lambda", positive=True)))
        if rule == "halfin_whitt":
            self.need(node, "beta", "load rule halfin_whitt")
            return LoadRule(rule, float(self.number(node, "beta", positive=True)))
        if rule == "custom":
            expr = self.need(node, "expr", "load rule custom")
            if not isinstance(expr, str):
                self.fail("'expr' must be a string expression in N", node, "expr")
            self.number(node, "expr", allow_expr=True)
            return LoadRule(rule, expr)
        self.fail(f"unknown load rule {rule!r}; expected fixed_per_server, fluid, halfin_whitt "
                  "or custom", node, "rule")

    def d_rule(self, r) -> DRule | None:
        if "d_rule" not in r:
            return None
        node = self.mapping(r, "d_rule")
        rule = self.need(node, "rule", "d_rule")
        if rule == "const":
            self.need(node, "d", "d_rule const")
            return DRule(rule, self.number(node, "d", positive=True, integer=True))
        if rule == "log":
            return DRule(rule)
        if rule == "pow":
            self.need(node, "alpha", "d_rule pow")
            return DRule(rule, float(self.number(node, "alpha", positive=True)))
        if rule == "custom":
            self.need(node, "expr", "d_rule custom")
            return DRule(rule, self.number(node, "expr", allow_expr=True))
        self.fail(f"unknown d_rule {rule!r}; expected const, log, pow or custom", node, "rule")

    def dynamics(self, r):
        if "dynamics" not in r:
            return SingleServerQueue()
        v = r["dynamics"]
        if v == "single_server":
            return SingleServerQueue()
        if v == "pool":
            return ServerPool(None)
        if isinstance(v, dict):
            kind = self.need(v, "type", "dynamics")
            if kind == "single_server":
                return SingleServerQueue()
            if kind == "pool":
                cap = v.get("capacity")
                if cap in (None, "inf", "infinite"):
                    return ServerPool(None)
                return ServerPool(self.number(v, "capacity", positive=True, integer=True))
            self.fail(f"unknown dynamics type {kind!r}", v, "type")
        self.fail("'dynamics' must be single_server, pool, or a mapping with 'type'", r, "dynamics")

    def topology(self, r) -> dict | None:
        if "topology" not in r:
            return None
        v = r["topology"]
        if isinstance(v, str):
            v2 = _LineDict(kind=v)
            v2.line, v2.key_lines = r.key_lines["topology"], {}
            v = v2
        if not isinstance(v, dict):
            self.fail("'topology' must be a kind name or a mapping", r, "topology")
        kind = self.need(v, "kind", "topology")
        if kind == "er":
            self.need(v, "p", "topology er")
            p = self.number(v, "p", nonneg=True, allow_expr=True)
            if not isinstance(p, str) and p > 1:
                self.fail("'p' must lie in [0, 1]", v, "p")
        elif kind == "file":
            self.need(v, "path", "topology file")
        elif kind not in ("clique", "ring", "edgeless"):
            self.fail(f"unknown topology kind {kind!r}", v, "kind")
        return _plain(v)

    def dispatchers(self, r) -> pol.MultiDispatcherSpec | None:
        if "dispatchers" not in r:
            return None
        v = self.mapping(r, "dispatchers")
        R = self.number(v, "R", positive=True, integer=True) if "R" in v else self.fail(
            "missing required key 'R' in dispatchers", v)
        alpha = v.get("alpha", [1.0 / R] * R)
        scenario = v.get("scenario", pol.BLOCKING)
        enh = None
        if "enhancement" in v:
            e = self.mapping(v, "enhancement")
            kind = self.need(e, "type", "enhancement")
            if kind == "A":
                enh = pol.EnhancementA(tuple(self.need(e, "beta", "enhancement A")))
            elif kind == "B":
                self.need(e, "nu", "enhancement B")
                enh = pol.EnhancementB(float(self.number(e, "nu", positive=True)))
            else:
                self.fail(f"unknown enhancement {kind!r}; expected A or B", e, "type")
        try:
            return pol.MultiDispatcherSpec(R, tuple(alpha), scenario, enh)
        except (ValueError, TypeError) as exc:
            self.fail(str(exc), r, "dispatchers")

    def cross_checks(self, cfg: ExperimentConfig) -> None:
        r = self.raw
        names = {e.name for e in cfg.policies}
        if cfg.dispatchers is not None and names != {"jiq"}:
            self.fail("'dispatchers' requires every policy to be jiq", r, "dispatchers")
        if "graph_jsq" in names and cfg.topology is None:
            self.fail("policy 'graph_jsq' needs a 'topology'", r, "policies" if "policies" in r else "policy")
        if isinstance(cfg.dynamics, ServerPool):
            bad = names & {"jsw", "redundancy", "rsq"}
            if bad:
                self.fail(f"policy {sorted(bad)[0]!r} is only defined for single-server queues",
                          r, "dynamics")
        blocking = cfg.dispatchers is not None and cfg.dispatchers.scenario == pol.BLOCKING
        for N in cfg.n_list:
            try:
                lam = cfg.load.arrival_rate(N)
            except (ValueError, ZeroDivisionError, TypeError) as exc:
                self.fail(f"load rule fails at N={N}: {exc}", r, "load")
            if lam < 0:
                self.fail(f"load rule gives negative arrival rate at N={N}", r, "load")
            if isinstance(cfg.dynamics, SingleServerQueue) and not blocking and lam >= N:
                self.fail(f"arrival rate {lam:g} >= N={N} makes single-server queues unstable",
                          r, "load")
            for e in cfg.policies:
                try:
                    spec = cfg.build_policy(e, N)
                    pol.validate(spec, N)
                except ConfigError:
                    raise
                except (ValueError, KeyError, TypeError, ZeroDivisionError) as exc:
                    raise ConfigError(f"policy {e.label!r} at N={N}: {exc}", e.line,
                                      self.source) from None
