"""Adjoint Volterra equation, Hamiltonian co-states and an adjoint-gradient optimizer.

The adjoint is discretized as the exact discrete adjoint of the trapezoidal
state scheme in :mod:`volterra_dp.volterra`.  At interior nodes this is the
trapezoidal rule for

    psi(t) = F_x(t) + F0'(x(T)) f_x(T, t) + int_t^T psi(s) f_x(s, t) ds,

with u-dependent node quantities averaged over the two adjacent intervals.
Gradients built from the discrete multipliers match finite differences of
the discrete cost to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cost import evaluate_cost
from .errors import DomainError, UnsupportedDerivativeError
from .kernels import Kernel
from .model import ControlFunction, ControlSet, CostSpec, TimeGrid
from .volterra import Trajectory, solve_parametrized, trapezoid_solve


@dataclass
class Adjoint:
    t: np.ndarray
    psi: np.ndarray
    multipliers: np.ndarray   # discrete Lagrange multipliers of the state equations


@dataclass
class CostatePair:
    psi: np.ndarray
    lam: np.ndarray           # shape (J_max, n+1): lam[j-1] = lambda_j
    lam_closed: np.ndarray    # same, from the iterated-integral closed form
    t: np.ndarray
    F0_prime: float


def _node_avg(fn, t, x, u):
    """fn(t_m, x_m, u) averaged over the controls of the intervals adjacent to node m."""
    n = len(t) - 1
    left = fn(t[1:], x[1:], u)            # node m = 1..n with u_{m-1}
    right = fn(t[:-1], x[:-1], u)         # node m = 0..n-1 with u_m
    out = np.empty(n + 1)
    out[0] = right[0]
    out[n] = left[-1]
    out[1:n] = 0.5 * (left[:-1] + right[1:])
    return out


def solve_adjoint(k: Kernel, traj: Trajectory, u: ControlFunction | None, cs: CostSpec) -> Adjoint:
    t, x = traj.t, traj.x
    us = traj.u if u is None else np.asarray(u.values[traj.start:])
    n = len(t) - 1
    h = traj.grid.h
    F0p = float(cs.F0_x(x[n]))
    p = np.zeros(n + 1)
    for m in range(n, 0, -1):
        dJ = 0.5 * h * float(cs.F_x(t[m], x[m], us[m - 1]))
        if m < n:
            dJ += 0.5 * h * float(cs.F_x(t[m], x[m], us[m]))
            ti = t[m + 1:]
            cim = 0.5 * h * (k._dtx(0, ti, t[m], x[m], us[m]) + k._dtx(0, ti, t[m], x[m], us[m - 1]))
            dJ += float(np.dot(p[m + 1:], cim))
        else:
            dJ += F0p
        cmm = 0.5 * h * float(k._dtx(0, t[m], t[m], x[m], us[m - 1]))
        p[m] = dJ / (1.0 - cmm)

    psi = np.empty(n + 1)
    psi[1:n] = p[1:n] / h
    psi[n] = float(cs.F_x(t[n], x[n], us[n - 1])) + F0p * float(k._dtx(0, t[n], t[n], x[n], us[n - 1]))
    c00 = 0.5 * h * float(k._dtx(0, t[0], t[0], x[0], us[0]))
    s0 = float(cs.F_x(t[0], x[0], us[0])) + float(np.dot(p[1:], k._dtx(0, t[1:], t[0], x[0], us[0])))
    psi[0] = s0 / (1.0 - c00)
    return Adjoint(t.copy(), psi, p)


def cost_gradient(k: Kernel, traj: Trajectory, u: ControlFunction | None, cs: CostSpec, adj: Adjoint) -> np.ndarray:
    """dJ/du_j for every control interval of the trajectory span."""
    t, x = traj.t, traj.x
    us = traj.u if u is None else np.asarray(u.values[traj.start:])
    n = len(t) - 1
    h = traj.grid.h
    p = adj.multipliers
    try:
        g = 0.5 * h * (cs.F_u(t[:-1], x[:-1], us) + cs.F_u(t[1:], x[1:], us))
        g = np.asarray(g, float).copy()
        for j in range(n):
            ti = t[j + 1:]
            fu = k._dtu(0, ti, t[j], x[j], us[j]) + k._dtu(0, ti, t[j + 1], x[j + 1], us[j])
            g[j] += 0.5 * h * float(np.dot(p[j + 1:], fu))
    except UnsupportedDerivativeError:
        raise
    return g


def fd_gradient(k, forcing, cs, u: ControlFunction, start=0.0, step=1e-5):
    """Central finite differences of J with respect to each interval value."""
    grid = u.grid
    i0 = grid.index(start)
    base = np.array(u.values)
    out = np.empty(grid.n_steps - i0)
    for j in range(i0, grid.n_steps):
        vals = []
        for sgn in (1.0, -1.0):
            v = base.copy()
            v[j] += sgn * step
            vals.append(_cost_of(k, forcing, cs, ControlFunction(grid, v), i0))
        out[j - i0] = (vals[0] - vals[1]) / (2 * step)
    return out


def _solve_from(k, forcing, u: ControlFunction, i0) -> Trajectory:
    return solve_parametrized(k, forcing, u.grid.t[i0], u, u.grid)


def _cost_of(k, forcing, cs, u, i0):
    return evaluate_cost(_solve_from(k, forcing, u, i0), None, cs)


def gradient_check(k, forcing, cs, u: ControlFunction, start=0.0, step=1e-5):
    """Relative sup-norm error between adjoint and finite-difference gradients."""
    i0 = u.grid.index(start)
    traj = _solve_from(k, forcing, u, i0)
    g = cost_gradient(k, traj, None, cs, solve_adjoint(k, traj, None, cs))
    fd = fd_gradient(k, forcing, cs, u, start, step)
    scale = max(np.max(np.abs(fd)), 1e-300)
    return float(np.max(np.abs(g - fd)) / scale), g, fd


# ------------------------------------------------------------ co-states

def _cumtrapz_from_end(y, h):
    """I_m = int_{t_m}^{T} y ds (trapezoid)."""
    seg = 0.5 * h * (y[:-1] + y[1:])
    out = np.zeros_like(y)
    out[:-1] = np.cumsum(seg[::-1])[::-1]
    return out


def build_lambda(adj: Adjoint, cs: CostSpec, traj: Trajectory, J_max=6) -> CostatePair:
    """lambda_1 = int_t^T psi + F0'(x(T)),  lambda_j = int_t^T lambda_{j-1}.

    The closed form lambda_j(t) = int_t^T (s-t)^{j-1}/(j-1)! psi(s) ds
    + F0' (T-t)^{j-1}/(j-1)! is computed alongside for comparison.
    """
    h = traj.grid.h
    t = adj.t
    psi = adj.psi
    F0p = float(cs.F0_x(traj.x[-1]))
    lam = np.empty((J_max, len(t)))
    lam[0] = _cumtrapz_from_end(psi, h) + F0p
    for j in range(1, J_max):
        lam[j] = _cumtrapz_from_end(lam[j - 1], h)
    closed = np.empty_like(lam)
    T = t[-1]
    for j in range(1, J_max + 1):
        fac = math.factorial(j - 1)
        for m, tm in enumerate(t):
            w = (t[m:] - tm) ** (j - 1) / fac * psi[m:]
            integral = 0.5 * h * float(np.sum(w[:-1] + w[1:])) if m < len(t) - 1 else 0.0
            closed[j - 1, m] = integral + F0p * (T - tm) ** (j - 1) / fac
    return CostatePair(psi.copy(), lam, closed, t.copy(), F0p)


def verify_hamiltonian(k: Kernel, traj: Trajectory, u: ControlFunction | None, cs: CostSpec,
                       pair: CostatePair, J_max=None) -> dict:
    """Residual of lambda_1' + sum_i lambda_i d^{i-1}_t f_x|_{s=t} + F_x = 0 with lambda_1' = -psi."""
    t, x = traj.t, traj.x
    us = traj.u if u is None else np.asarray(u.values[traj.start:])
    J = pair.lam.shape[0] if J_max is None else J_max
    if J > k.deriv_max + 1:
        raise UnsupportedDerivativeError(f"kernel provides only {k.deriv_max} t-derivatives")
    acc = _node_avg(lambda tt, xx, uu: cs.F_x(tt, xx, uu), t, x, us) - pair.psi
    for i in range(1, J + 1):
        gx = _node_avg(lambda tt, xx, uu, i=i: k._dtx(i - 1, tt, tt, xx, uu), t, x, us)
        acc = acc + pair.lam[i - 1] * gx
    # tail int_t^T lambda_J(s) d^J_s f_x(s, t, x(t), u(t)) ds
    h = traj.grid.h
    tail = np.zeros(len(t))
    if J <= k.deriv_max:
        for m in range(len(t) - 1):
            um = us[m]
            w = pair.lam[J - 1][m:] * k._dtx(J, t[m:], t[m], x[m], um)
            tail[m] = 0.5 * h * float(np.sum(w[:-1] + w[1:]))
    return {
        "J_max": J,
        "residual": acc,
        "max_residual": float(np.max(np.abs(acc))),
        "tail": tail,
        "max_tail": float(np.max(np.abs(tail))),
    }


def verify_psi_lambda(psi, lam, j, h) -> float:
    """max |(-1)^j d^j lambda_j / dt^j - psi| on interior nodes, by central differences."""
    if not 1 <= j <= 3:
        raise DomainError("finite-difference depth limited to j <= 3")
    L = np.asarray(lam[j - 1])
    psi = np.asarray(psi)
    if j == 1:
        d = (L[2:] - L[:-2]) / (2 * h)
        ref = psi[1:-1]
    elif j == 2:
        d = (L[2:] - 2 * L[1:-1] + L[:-2]) / h**2
        ref = psi[1:-1]
    else:
        d = (L[4:] - 2 * L[3:-1] + 2 * L[1:-3] - L[:-4]) / (2 * h**3)
        ref = psi[2:-2]
    return float(np.max(np.abs((-1) ** j * d - ref)))


# ------------------------------------------------------------ optimizer

@dataclass
class DescentResult:
    control: ControlFunction
    J: float
    J_init: float
    iterations: int
    converged: bool
    stagnated: bool = False
    history: list = field(default_factory=list)


def projected_gradient_descent(k: Kernel, x0, cs: CostSpec, K: ControlSet, grid: TimeGrid,
                               u_init: ControlFunction, max_iters=200, tol=1e-6, start=0.0,
                               armijo=1e-4, shrink=0.5, max_shrinks=40) -> DescentResult:
    """Projected gradient with Armijo backtracking; optimizes intervals from ``start`` on.

    The first trial step of each line search is the Barzilai-Borwein step
    when the last two iterates give positive curvature, else twice the last
    accepted step.

    ``x0`` is the forcing on [start, T]; for a restart pass the history forcing.
    """
    i0 = grid.index(start)
    vals = K.project(np.array(u_init.values, float))
    u = ControlFunction(grid, vals)

    def evaluate(uf):
        tr = _solve_from(k, x0, uf, i0)
        return tr, evaluate_cost(tr, None, cs)

    traj, J = evaluate(u)
    J_init = J
    h = grid.h
    step = 1.0
    history = [J]
    converged = stagnated = False
    prev = None
    it = 0
    for it in range(1, max_iters + 1):
        g = cost_gradient(k, traj, None, cs, solve_adjoint(k, traj, None, cs))
        d = g / h
        cur = np.array(u.values)
        pg = cur[i0:] - K.project(cur[i0:] - d)
        if np.max(np.abs(pg)) <= tol:
            converged = True
            break
        s = min(step * 2.0, 1e3)
        if prev is not None:
            du, dd = cur[i0:] - prev[0], d - prev[1]
            curv = float(np.dot(du, dd))
            if curv > 0:
                s = min(max(float(np.dot(du, du)) / curv, 1e-10), 1e6)   # Barzilai-Borwein trial
        prev = (cur[i0:].copy(), d.copy())
        accepted = False
        for _ in range(max_shrinks):
            trial = cur.copy()
            trial[i0:] = K.project(cur[i0:] - s * d)
            cand = ControlFunction(grid, trial)
            ctraj, cJ = evaluate(cand)
            if cJ <= J + armijo * float(np.dot(g, trial[i0:] - cur[i0:])):
                accepted = True
                break
            s *= shrink
        if not accepted:
            stagnated = True
            break
        step = s
        u, traj, J = cand, ctraj, cJ
        history.append(J)
    return DescentResult(u, J, J_init, it, converged, stagnated, history)


def multistart_reference(k, x0, cs, K: ControlSet, grid, rng, n_random=5, start=0.0, base=None, **kw):
    """Best projected-gradient result over random and constant-extreme starts."""
    base_vals = np.zeros(grid.n_steps) if base is None else np.array(base.values, float)
    inits = []
    for _ in range(n_random):
        v = base_vals.copy()
        v[grid.index(start):] = ControlFunction.random_piecewise(grid, K, rng).values[grid.index(start):]
        inits.append(ControlFunction(grid, v))
    for c in (K.lower, K.upper):
        v = base_vals.copy()
        v[grid.index(start):] = c
        inits.append(ControlFunction(grid, v))
    results = [projected_gradient_descent(k, x0, cs, K, grid, ui, start=start, **kw) for ui in inits]
    best = min(results, key=lambda r: r.J)
    return best, results
