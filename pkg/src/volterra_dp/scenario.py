"""Scenario files: YAML documents describing one control problem plus run parameters.

Schema (all keys except ``name``, ``horizon``, ``kernel`` optional)::

    name: exp_kernel
    horizon: 1.0            # T > 0
    steps: 400              # evaluation grid
    state_bound: 15.0       # |x| range used for derivative bounds and L_F
    seed: 7
    kernel:
      family: exponential   # zero | exponential | polynomial | separable
      beta: 1.0             # exponential: exp(beta t + sigma s) (a x + b u + c)
      sigma: 0.0
      a: 1.0
      b: 1.0
      c: 0.0
      # polynomial: coeffs: [[const, x, u], ...]   (row j multiplies t^j)
      # separable: time: {exp: r} | {sin: w, phase: p} | {poly: [...]}; memory: same;
      #            state: {a, b, c, d}   (h = a x + b u + c + d sin x)
    forcing: {constant: 0.5}   # or {polynomial: [c0, c1, ...]}
    cost: {q: 1, r: 1, p: 0, w: 0, c: 0, qf: 1, pf: 0, cf: 0}
    controls: {lower: -1, upper: 1, count: 21}
    orders: [0, 1, 2]        # truncation orders for bound tables
    battery: 4               # random controls added to the extremes and midpoint
    restart_time: 0.5
    dp: {orders: [0, 1, 2], steps: 40, nodes: [61, 15, 11], controls: 21, inflation: 0.25}
    optimizer: {steps: 100, max_iters: 200, tol: 1.0e-6, random_starts: 5}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .errors import ConfigError, DomainError
from .kernels import (Domain, ExpFactor, ExponentialKernel, PolyFactor, PolynomialKernel,
                      SeparableKernel, SinFactor, StateFactor, ZeroKernel)
from .model import ControlSet, CostSpec, Forcing, TimeGrid

BUNDLED = ("poly_exact", "exp_kernel", "lqr_check", "convolution")


@dataclass
class DPConfig:
    orders: list = field(default_factory=lambda: [0])
    steps: int = 40
    nodes: list = field(default_factory=lambda: [41, 15, 11])
    controls: int = 21
    inflation: float = 0.25
    lookup: str = "nearest"


@dataclass
class OptimizerConfig:
    steps: int = 100
    max_iters: int = 200
    tol: float = 1e-6
    random_starts: int = 5


@dataclass
class Scenario:
    name: str
    kernel: object
    forcing: Forcing
    cost: CostSpec
    controls: ControlSet
    grid: TimeGrid
    orders: list
    dp: DPConfig
    optimizer: OptimizerConfig
    seed: int = 0
    battery: int = 4
    restart_time: float = 0.5
    state_bound: float = 10.0
    raw: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.grid.T

    @property
    def opt_grid(self):
        return TimeGrid(self.grid.T, self.optimizer.steps)

    @property
    def dp_grid(self):
        return TimeGrid(self.grid.T, self.dp.steps)

    def with_steps(self, steps):
        out = Scenario(**{**self.__dict__})
        out.grid = TimeGrid(self.grid.T, steps)
        return out

    def describe(self):
        return json.dumps(self.raw, sort_keys=True)


# ------------------------------------------------------------ YAML with line numbers

def _to_python(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for knode, vnode in node.value:
            key = knode.value
            sub = f"{path}.{key}" if path else key
            if key in out:
                raise ConfigError("duplicate key", sub, knode.start_mark.line + 1)
            lines[sub] = knode.start_mark.line + 1
            out[key] = _to_python(vnode, sub, lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, f"{path}[{i}]", lines) for i, v in enumerate(node.value)]
    return _scalar(node)


def _scalar(node):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node)
    finally:
        loader.dispose()


def parse_text(text, source="<string>"):
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"cannot parse {source}: {getattr(exc, 'problem', exc)}", "<document>",
                          mark.line + 1 if mark else None) from None
    if root is None or not isinstance(root, yaml.MappingNode):
        raise ConfigError("top level must be a mapping", "<document>", 1)
    lines = {}
    return _to_python(root, "", lines), lines


class _Reader:
    """Typed access to the parsed mapping with field/line-aware errors."""

    def __init__(self, data, lines):
        self.data, self.lines = data, lines
        self.used = set()

    def fail(self, path, msg):
        line = self.lines.get(path)
        if line is None and "." in path:
            line = self.lines.get(path.rsplit(".", 1)[0])
        raise ConfigError(msg, path, line)

    def get(self, path, default=None, required=False):
        cur = self.data
        for part in path.split("."):
            if not isinstance(cur, dict) or part not in cur:
                if required:
                    self.fail(path, "required field is missing")
                return default
            cur = cur[part]
        self.used.add(path)
        return cur

    def number(self, path, default=None, required=False, positive=False, nonneg=False, integer=False):
        v = self.get(path, default, required)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, f"expected a number, got {v!r}")
        if integer and int(v) != v:
            self.fail(path, f"expected an integer, got {v!r}")
        if not math.isfinite(v):
            self.fail(path, "must be finite")
        if positive and not v > 0:
            self.fail(path, f"must be positive, got {v!r}")
        if nonneg and v < 0:
            self.fail(path, f"must be non-negative, got {v!r}")
        return int(v) if integer else float(v)

    def mapping(self, path, required=False):
        v = self.get(path, None, required)
        if v is None:
            return {}
        if not isinstance(v, dict):
            self.fail(path, "expected a mapping")
        return v

    def int_list(self, path, default):
        v = self.get(path, default)
        if not isinstance(v, list) or not v:
            self.fail(path, "expected a non-empty list")
        for i, e in enumerate(v):
            if isinstance(e, bool) or not isinstance(e, int) or e < 0:
                self.fail(f"{path}[{i}]", f"expected a natural number, got {e!r}")
        return list(v)


def _factor(rd, path):
    spec = rd.mapping(path)
    if not spec:
        return None
    if "exp" in spec:
        return ExpFactor(rd.number(f"{path}.exp"))
    if "sin" in spec:
        return SinFactor(rd.number(f"{path}.sin"), rd.number(f"{path}.phase", 0.0))
    if "poly" in spec:
        coeffs = rd.get(f"{path}.poly")
        if not isinstance(coeffs, list) or not all(isinstance(c, (int, float)) for c in coeffs):
            rd.fail(f"{path}.poly", "expected a list of numbers")
        return PolyFactor(coeffs)
    rd.fail(path, "factor needs one of exp, sin, poly")


def _kernel(rd, domain):
    fam = rd.get("kernel.family", required=True)
    if fam == "zero":
        return ZeroKernel(domain)
    if fam == "exponential":
        kw = {key: rd.number(f"kernel.{key}", dflt) for key, dflt in
              (("beta", 1.0), ("sigma", 0.0), ("a", 1.0), ("b", 0.0), ("c", 0.0))}
        return ExponentialKernel(domain=domain, **kw)
    if fam == "polynomial":
        rows = rd.get("kernel.coeffs", required=True)
        if not isinstance(rows, list) or not rows:
            rd.fail("kernel.coeffs", "expected a list of [const, x, u] rows")
        clean = []
        for j, row in enumerate(rows):
            if (not isinstance(row, list) or len(row) != 3
                    or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row)):
                rd.fail(f"kernel.coeffs[{j}]", "each row must be [const, x_coef, u_coef]")
            clean.append(tuple(float(v) for v in row))
        return PolynomialKernel.linear(clean, domain)
    if fam == "separable":
        st = rd.mapping("kernel.state")
        state = StateFactor(*(rd.number(f"kernel.state.{key}", d) for key, d in
                              (("a", 1.0), ("b", 0.0), ("c", 0.0), ("d", 0.0)))) if st else None
        return SeparableKernel(_factor(rd, "kernel.time"), _factor(rd, "kernel.memory"), state, domain)
    rd.fail("kernel.family", f"unsupported family {fam!r} (zero, exponential, polynomial, separable)")


def _forcing(rd):
    spec = rd.mapping("forcing")
    if not spec:
        return Forcing.constant(0.0)
    if "constant" in spec:
        return Forcing.constant(rd.number("forcing.constant"))
    if "polynomial" in spec:
        coeffs = rd.get("forcing.polynomial")
        if not isinstance(coeffs, list) or not all(isinstance(c, (int, float)) for c in coeffs):
            rd.fail("forcing.polynomial", "expected a list of numbers")
        return Forcing.polynomial(coeffs)
    rd.fail("forcing", "forcing needs 'constant' or 'polynomial'")


def build(data, lines, source="<string>") -> Scenario:
    rd = _Reader(data, lines)
    name = rd.get("name", Path(source).stem)
    T = rd.number("horizon", required=True, positive=True)
    steps = rd.number("steps", 400, integer=True)
    if steps < 2:
        rd.fail("steps", "need at least 2 steps")
    xb = rd.number("state_bound", 10.0, positive=True)
    lo = rd.number("controls.lower", -1.0)
    hi = rd.number("controls.upper", 1.0)
    if lo > hi:
        rd.fail("controls.lower", f"lower bound {lo} exceeds upper bound {hi}")
    count = rd.number("controls.count", 21, integer=True)
    if count < 2:
        rd.fail("controls.count", "need at least 2 control values")
    K = ControlSet(lo, hi, count)
    domain = Domain(T, -xb, xb, lo, hi)
    kernel = _kernel(rd, domain)
    forcing = _forcing(rd)
    ckw = {key: rd.number(f"cost.{key}", 0.0) for key in ("q", "r", "p", "w", "c", "qf", "pf", "cf")}
    cost = CostSpec.quadratic(x_bound=xb, **ckw)
    orders = rd.int_list("orders", [0, 1, 2])
    dpd = DPConfig(
        orders=rd.int_list("dp.orders", [0]),
        steps=rd.number("dp.steps", 40, integer=True, positive=True),
        nodes=rd.int_list("dp.nodes", [41, 15, 11]),
        controls=rd.number("dp.controls", count, integer=True),
        inflation=rd.number("dp.inflation", 0.25, nonneg=True),
        lookup=rd.get("dp.lookup", "nearest"),
    )
    if max(dpd.orders) + 1 > 3:
        rd.fail("dp.orders", "grid dynamic programming supports N + 1 <= 3")
    if len(dpd.nodes) < max(dpd.orders) + 1 or min(dpd.nodes) < 2:
        rd.fail("dp.nodes", "need at least 2 nodes for each DP state dimension")
    if dpd.controls < 2:
        rd.fail("dp.controls", "need at least 2 control values")
    if dpd.lookup not in ("nearest", "greedy"):
        rd.fail("dp.lookup", "expected 'nearest' or 'greedy'")
    opt = OptimizerConfig(
        steps=rd.number("optimizer.steps", 100, integer=True, positive=True),
        max_iters=rd.number("optimizer.max_iters", 200, integer=True, positive=True),
        tol=rd.number("optimizer.tol", 1e-6, positive=True),
        random_starts=rd.number("optimizer.random_starts", 5, integer=True, nonneg=True),
    )
    seed = rd.number("seed", 0, integer=True, nonneg=True)
    battery = rd.number("battery", 4, integer=True, nonneg=True)
    t_r = rd.number("restart_time", 0.5 * T, nonneg=True)
    if t_r >= T:
        rd.fail("restart_time", "restart time must lie before the horizon")
    for label, n in (("steps", steps), ("dp.steps", dpd.steps), ("optimizer.steps", opt.steps)):
        try:
            TimeGrid(T, n).index(t_r)
        except DomainError:
            rd.fail("restart_time", f"restart time {t_r} is not a node of the {label} grid")
    if steps % dpd.steps:
        rd.fail("dp.steps", "DP steps must divide the evaluation steps")
    known = {"name", "horizon", "steps", "state_bound", "seed", "kernel", "forcing", "cost",
             "controls", "orders", "battery", "restart_time", "dp", "optimizer"}
    for key in data:
        if key not in known:
            rd.fail(key, "unknown field")
    return Scenario(name, kernel, forcing, cost, K, TimeGrid(T, steps), orders, dpd, opt,
                    seed, battery, t_r, xb, data)


def load(path_or_name) -> Scenario:
    """Load a scenario from a file path or the name of a bundled scenario."""
    p = Path(path_or_name)
    if p.exists():
        text, source = p.read_text(), str(p)
    elif str(path_or_name) in BUNDLED:
        source = f"{path_or_name}.yaml"
        text = resources.files("volterra_dp.scenarios").joinpath(source).read_text()
    else:
        raise ConfigError(f"no such file or bundled scenario: {path_or_name}", "--config")
    data, lines = parse_text(text, source)
    try:
        return build(data, lines, source)
    except DomainError as exc:
        raise ConfigError(str(exc), "<document>") from None


def loads(text) -> Scenario:
    data, lines = parse_text(text)
    return build(data, lines)
