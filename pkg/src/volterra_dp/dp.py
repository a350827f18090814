"""Backward semi-Lagrangian dynamic programming for the truncated ODE control problem.

V(t_k, xi) = min_a [ F(t_k, x0(t_k) + xi_1, a) h + V~(t_{k+1}, xi + h rhs(t_k, xi, a)) ]

on a uniform node grid over a state box, with multilinear interpolation
clamped at the box faces.  Only N + 1 <= 3 state dimensions are supported.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .bounds import cost_slack, numerical_slack, omega_bound, phi_curve, psi_bound, xi_tail, zeta_curve
from .cost import evaluate_cost
from .errors import BoxTooSmallError, DomainError
from .model import ControlFunction, ControlSet, CostSpec, TimeGrid
from .truncation import TruncatedSystem, build_system, integrate, recover_state, rk4_step
from .volterra import history_forcing, solve_parametrized, solve_volterra

MAX_DIM = 3


@dataclass
class StateBox:
    lower: np.ndarray
    upper: np.ndarray
    counts: tuple
    samples: np.ndarray | None = None   # (n_paths, n_slices, dim) reachable-set sample
    inflation: float = 0.25

    def __post_init__(self):
        self.lower = np.asarray(self.lower, float)
        self.upper = np.asarray(self.upper, float)
        self.counts = tuple(int(c) for c in self.counts)
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise DomainError("state box bounds must be finite")
        if np.any(self.lower >= self.upper):
            raise DomainError("state box needs lower < upper in every dimension")
        if len(self.counts) != self.dim or min(self.counts) < 2:
            raise DomainError("state box needs at least 2 nodes per dimension")

    @property
    def dim(self):
        return len(self.lower)

    @property
    def spacing(self):
        return (self.upper - self.lower) / (np.array(self.counts) - 1)

    @property
    def axes(self):
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.counts)]

    def nodes(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cells_outside(self, pts):
        """Largest distance outside the box, in cells, over the given points."""
        pts = np.atleast_2d(pts)
        below = (self.lower - pts) / self.spacing
        above = (pts - self.upper) / self.spacing
        return float(max(0.0, np.max(below), np.max(above)))

    def contains(self, pts, cells=0.0):
        return self.cells_outside(pts) <= cells


def bang_bang(grid, K: ControlSet, rng, blocks=8):
    levels = rng.choice([K.lower, K.upper], size=blocks)
    idx = np.minimum((np.arange(grid.n_steps) * blocks) // grid.n_steps, blocks - 1)
    return ControlFunction(grid, levels[idx])


def estimate_box(sys: TruncatedSystem, K: ControlSet, grid: TimeGrid, counts, rng,
                 xi_start=None, t_start=0.0, inflation=0.25, n_random=8) -> StateBox:
    """Envelope of paths under both constant extremes and random bang-bang controls.

    The envelope width is enlarged by ``inflation`` (half on each side).
    """
    xi0 = np.zeros(sys.dim) if xi_start is None else np.asarray(xi_start, float)
    controls = [ControlFunction.constant(grid, K.lower), ControlFunction.constant(grid, K.upper)]
    controls += [bang_bang(grid, K, rng) for _ in range(n_random)]
    paths = np.stack([integrate(sys, u, xi0, t_start, grid).xi for u in controls])
    lo = paths.min(axis=(0, 1))
    hi = paths.max(axis=(0, 1))
    width = np.maximum(hi - lo, 1e-3 * np.maximum(1.0, np.abs(hi) + np.abs(lo)))
    pad = 0.5 * inflation * width
    pad = np.maximum(pad, 0.5 * (width - (hi - lo)))
    return StateBox(lo - pad, hi + pad, tuple(counts[: sys.dim]), paths, inflation)


def interpolate(table, box: StateBox, pts):
    """Multilinear interpolation of a node table at ``pts`` (n, dim), clamped to the box."""
    pts = np.atleast_2d(pts)
    counts = np.array(box.counts)
    pos = (pts - box.lower) / box.spacing
    pos = np.clip(pos, 0.0, counts - 1)
    base = np.minimum(np.floor(pos).astype(int), counts - 2)
    frac = pos - base
    flat = table.ravel()
    strides = np.array([int(np.prod(counts[d + 1:])) for d in range(box.dim)])
    out = np.zeros(len(pts))
    for corner in itertools.product((0, 1), repeat=box.dim):
        c = np.array(corner)
        w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
        out += w * flat[(base + c) @ strides]
    return out


@dataclass
class ValueFunction:
    grid: TimeGrid
    start: int
    box: StateBox
    table: np.ndarray        # (n_slices, *counts): slice j is time grid.t[start + j]
    scheme: str = "multilinear"

    def slice_index(self, t):
        j = self.grid.index(t) - self.start
        if not 0 <= j < len(self.table):
            raise DomainError(f"time {t} outside the value-function horizon")
        return j

    def at(self, t, xi):
        j = self.slice_index(t)
        return float(interpolate(self.table[j], self.box, np.asarray(xi, float)[None, :])[0])

    def to_csv(self, path):
        nodes = self.box.nodes()
        ts = self.grid.t[self.start:]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"xi_{n}" for n in range(1, self.box.dim + 1)] + ["V"])
            for j, tj in enumerate(ts):
                for node, v in zip(nodes, self.table[j].ravel()):
                    w.writerow([repr(float(tj))] + [repr(float(c)) for c in node] + [repr(float(v))])


@dataclass
class Policy:
    grid: TimeGrid
    start: int
    box: StateBox
    table: np.ndarray        # (n_slices - 1, *counts) minimizing control per node

    def nearest(self, j, xi):
        idx = np.rint((np.asarray(xi, float) - self.box.lower) / self.box.spacing).astype(int)
        idx = np.clip(idx, 0, np.array(self.box.counts) - 1)
        return float(self.table[j][tuple(idx)])

    def to_csv(self, path):
        nodes = self.box.nodes()
        ts = self.grid.t[self.start:-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"xi_{n}" for n in range(1, self.box.dim + 1)] + ["u"])
            for j, tj in enumerate(ts):
                for node, v in zip(nodes, self.table[j].ravel()):
                    w.writerow([repr(float(tj))] + [repr(float(c)) for c in node] + [repr(float(v))])


def _stage(sys, cs, V_next, box, t, h, pts, alphas):
    """Costs (n_alpha, n_pts) of each candidate control and the flowed points (n_alpha, n_pts, dim)."""
    a = np.asarray(alphas, float)[:, None]
    x = sys.x0(t) + pts[:, 0]
    flowed = pts[None] + h * sys.rhs(t, pts[None], a)
    nxt = interpolate(V_next, box, flowed.reshape(-1, box.dim)).reshape(len(a), len(pts))
    return cs.F(t, x[None], a) * h + nxt, flowed


def solve_dp(sys: TruncatedSystem, cs: CostSpec, box: StateBox, K: ControlSet, grid: TimeGrid,
             t_start=0.0, n_controls=None):
    """Backward recursion on ``grid`` from T down to ``t_start``; returns (ValueFunction, Policy)."""
    if sys.dim > MAX_DIM:
        raise DomainError(f"grid DP supports at most {MAX_DIM} state dimensions, got {sys.dim}")
    if box.dim != sys.dim:
        raise DomainError("state box dimension does not match the system")
    i0 = grid.index(t_start)
    n = grid.n_steps
    h = grid.h
    alphas = K.values(n_controls)
    pts = box.nodes()
    shape = box.counts
    V = np.empty((n - i0 + 1,) + shape)
    P = np.empty((n - i0,) + shape)
    T = grid.T
    V[-1] = np.asarray(cs.F0(sys.x0(T) + pts[:, 0]), float).reshape(shape)
    for k in range(n - 1, i0 - 1, -1):
        j = k - i0
        t = grid.t[k]
        costs, _ = _stage(sys, cs, V[j + 1], box, t, h, pts, alphas)
        best = np.argmin(costs, axis=0)
        V[j] = costs[best, np.arange(len(pts))].reshape(shape)
        P[j] = alphas[best].reshape(shape)
        if box.samples is not None and j < box.samples.shape[1]:
            probe = box.samples[:, j]
            pc, pf = _stage(sys, cs, V[j + 1], box, t, h, probe, alphas)
            pb = np.argmin(pc, axis=0)
            landed = pf[pb, np.arange(len(probe))]
            out = box.cells_outside(landed)
            if out > 1.0:
                grow = box.inflation + 2.0 * out * float(np.max(box.spacing / (box.upper - box.lower)))
                raise BoxTooSmallError(f"optimal flow leaves the state box by {out:.2f} cells at t={t:.4g}",
                                       suggested_inflation=grow)
        if not np.all(np.isfinite(V[j])):
            raise DomainError(f"non-finite value at t={t}")
    return ValueFunction(grid, i0, box, V), Policy(grid, i0, box, P)


@dataclass
class Extraction:
    control: ControlFunction      # on the DP grid; intervals before the start keep the prefix
    path: np.ndarray              # xi along the rollout on the DP grid
    value: float                  # V(t_start, xi_start)
    J_truncated: float | None = None
    epsilon: float | None = None


def extract_control(pol: Policy, sys: TruncatedSystem, xi_start, t_start=0.0, vf: ValueFunction | None = None,
                    cs: CostSpec | None = None, eval_grid: TimeGrid | None = None, prefix=None,
                    lookup="nearest", K: ControlSet | None = None) -> Extraction:
    """Forward rollout of the tabulated policy, then J_[N] of the result on ``eval_grid``."""
    grid, box = pol.grid, pol.box
    i0 = grid.index(t_start)
    if i0 < pol.start:
        raise DomainError("policy does not cover the requested start time")
    xi = np.asarray(xi_start, float)
    if not box.contains(xi):
        raise BoxTooSmallError("start state lies outside the DP box", suggested_inflation=box.inflation * 2)
    vals = np.zeros(grid.n_steps) if prefix is None else np.array(prefix.values, float)
    path = [xi]
    h = grid.h
    for k in range(i0, grid.n_steps):
        j = k - pol.start
        if lookup == "greedy":
            if vf is None or cs is None or K is None:
                raise DomainError("greedy lookup needs the value function, cost and control set")
            alphas = K.values()
            costs, _ = _stage(sys, cs, vf.table[j + 1], box, grid.t[k], h, xi[None, :], alphas)
            a = float(alphas[int(np.argmin(costs[:, 0]))])
        else:
            a = pol.nearest(j, xi)
        vals[k] = a
        xi = rk4_step(sys, grid.t[k], xi, a, h)
        out = box.cells_outside(xi)
        if out > 1.0:
            raise BoxTooSmallError(f"rollout leaves the state box by {out:.2f} cells at t={grid.t[k + 1]:.4g}",
                                   suggested_inflation=box.inflation * 2)
        path.append(xi)
    u = ControlFunction(grid, vals)
    V0 = vf.at(t_start, xi_start) if vf is not None else float("nan")
    res = Extraction(u, np.array(path), V0)
    if cs is not None:
        eg = grid if eval_grid is None else eval_grid
        uf = u.resample(eg)
        tt = integrate(sys, uf, np.asarray(xi_start, float), t_start, eg)
        res.J_truncated = evaluate_cost(recover_state(tt, sys.x0), None, cs)
        res.epsilon = res.J_truncated - V0
    return res


# ------------------------------------------------------------ scenario-level checks

def _dp_for(scen, N, xi_start=None, t_start=0.0, rng=None):
    sys = build_system(scen.kernel, N, scen.forcing)
    rng = np.random.default_rng(scen.seed) if rng is None else rng
    K = ControlSet(scen.controls.lower, scen.controls.upper, scen.dp.controls)
    box = estimate_box(sys, K, scen.dp_grid, scen.dp.nodes, rng, xi_start, t_start, scen.dp.inflation)
    vf, pol = solve_dp(sys, scen.cost, box, K, scen.dp_grid, t_start)
    return sys, K, vf, pol


def reference_optimum(scen, rng, start=0.0, forcing=None):
    """Multi-start projected gradient on the optimizer grid, re-evaluated on the evaluation grid."""
    from .adjoint import multistart_reference

    x0 = scen.forcing if forcing is None else forcing
    og = scen.opt_grid
    best, results = multistart_reference(scen.kernel, x0, scen.cost, scen.controls, og, rng,
                                         n_random=scen.optimizer.random_starts, start=start,
                                         max_iters=scen.optimizer.max_iters, tol=scen.optimizer.tol)
    u = best.control.resample(scen.grid)
    tr = solve_parametrized(scen.kernel, x0, start, u, scen.grid)
    return u, evaluate_cost(tr, None, scen.cost), best, results


def sandwich_check(scen, N, epsilon=None, reference=None, solved=None):
    """J(u*) - eps - 2 omega_N(T) <= J* <= J(u*) for the DP-extracted control u*.

    ``reference`` is a (control on the evaluation grid, J*) pair from
    :func:`reference_optimum`; ``solved`` may carry a precomputed
    (system, K, ValueFunction, Policy).  eps is measured against the grid
    value V, so any amount by which V exceeds J_[N](u_ref) (a certified
    overshoot of the grid DP) joins the slack of the lower inequality.
    """
    k, x0, cs, grid = scen.kernel, scen.forcing, scen.cost, scen.grid
    rng = np.random.default_rng(scen.seed)
    sys, K, vf, pol = _dp_for(scen, N, rng=rng) if solved is None else solved
    ext = extract_control(pol, sys, np.zeros(sys.dim), 0.0, vf, cs, grid, lookup=scen.dp.lookup, K=K)
    eps = ext.epsilon if epsilon is None else epsilon
    u_star = ext.control.resample(grid)
    tr = solve_volterra(k, x0, u_star, grid)
    J_u = evaluate_cost(tr, u_star, cs)
    om = omega_bound(k.M(N + 1), k.L0, cs.L_F, cs.L_F0, N, grid.T)
    if reference is None:
        u_ref, J_ref, _, _ = reference_optimum(scen, rng)
    else:
        u_ref, J_ref = reference
    J_trunc_ref = evaluate_cost(recover_state(integrate(sys, u_ref, np.zeros(sys.dim), 0.0, grid), x0), None, cs)
    dp_slack = max(0.0, ext.value - J_trunc_ref)
    slack = cost_slack(grid.h, np.max(np.abs(tr.x)), cs.L_F, cs.L_F0, grid.T)
    lower = J_u - eps - 2 * om
    lower_holds = bool(lower - slack - dp_slack <= J_ref)
    upper_holds = bool(J_ref <= J_u + slack)
    return {
        "N": N, "J_u": J_u, "epsilon": eps, "omega": om, "J_ref": J_ref, "V": ext.value,
        "J_truncated": ext.J_truncated, "J_trunc_ref": J_trunc_ref, "lower": lower, "slack": slack,
        "dp_slack": dp_slack, "lower_holds": lower_holds, "upper_holds": upper_holds,
        "holds": lower_holds and upper_holds,
    }


def value_convergence_check(scen, t, N_range, base_control=None, phi_variant="series"):
    """|J*_{t,xi} - V_[N](t, xi_[N])| against psi_N(T, t, xi) for each N.

    xi comes from the original trajectory under ``base_control`` (default: the
    midpoint of K).  psi_N depends on the control, so it is evaluated along
    both the reference optimum and the DP-extracted control and the larger
    value is used.  Since J* <= J(u_dp) and V* <= J_[N](u_ref),

        J* - V <= psi + eps_achieved,    V - J* <= psi + (V - J_[N](u_ref)),

    so the measured grid error max(0, eps, V - J_[N](u_ref)) joins the slack.
    """
    k, x0, cs, grid = scen.kernel, scen.forcing, scen.cost, scen.grid
    K = scen.controls
    rng = np.random.default_rng(scen.seed)
    ub = base_control or ControlFunction.constant(grid, 0.5 * (K.lower + K.upper))
    base = solve_volterra(k, x0, ub, grid)
    xi = xi_tail(base, k, ub, t)
    X0 = history_forcing(k, x0, base, t)
    i_t = grid.index(t)
    if i_t == grid.n_steps:
        return [{"N": N, "diff": 0.0, "psi": 0.0, "dp_slack": 0.0, "holds": True} for N in N_range]
    u_ref, J_ref, _, _ = reference_optimum(scen, rng, start=t, forcing=X0)
    # graft the reference onto the base control before t
    ref_vals = np.array(ub.values)
    ref_vals[i_t:] = u_ref.values[i_t:]
    u_ref = ControlFunction(grid, ref_vals)
    slack = cost_slack(grid.h, np.max(np.abs(base.x)), cs.L_F, cs.L_F0, grid.T - t)
    L0 = k.L0
    rows = []
    for N in N_range:
        comps = np.array([xi(n) for n in range(1, N + 2)])
        sys, Kd, vf, pol = _dp_for(scen, N, comps, t, rng)
        prefix = ControlFunction(scen.dp_grid, np.zeros(scen.dp_grid.n_steps))
        ext = extract_control(pol, sys, comps, t, vf, cs, grid, prefix, scen.dp.lookup, Kd)
        V = vf.at(t, comps)
        u_dp = ControlFunction(grid, np.concatenate([ub.values[:i_t], ext.control.resample(grid).values[i_t:]]))
        psis, costs = [], []
        for u in (u_ref, u_dp):
            xN = recover_state(integrate(sys, u, comps, t, grid), x0)
            zeta = zeta_curve(phi_curve(xi, k, xN, t, N, phi_variant), L0, grid.h)
            psis.append(psi_bound(zeta, cs.L_F, cs.L_F0, t, grid.T))
            costs.append(evaluate_cost(xN, None, cs))
        psi = max(psis)
        # a-posteriori DP grid error: V + eps is attained by u_dp, and V above J_[N](u_ref) is overshoot
        dp_slack = max(0.0, ext.epsilon, V - costs[0])
        diff = abs(J_ref - V)
        rows.append({"N": N, "J_ref": J_ref, "V": V, "diff": diff, "psi": psi, "epsilon": ext.epsilon,
                     "J_trunc_ref": costs[0], "dp_slack": dp_slack, "slack": slack,
                     "holds": bool(diff <= psi + dp_slack + slack)})
    return rows
