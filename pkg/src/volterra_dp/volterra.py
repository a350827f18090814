"""Trapezoidal time stepping for controlled Volterra equations.

Quadrature convention: on the interval [t_j, t_{j+1}] the control takes its
piecewise-constant value u_j at *both* endpoints, so

    x_i = x0(t_i) + h/2 sum_{j<i} [f(t_i, t_j, x_j, u_j) + f(t_i, t_{j+1}, x_{j+1}, u_j)].

The diagonal term involves x_i itself and is resolved by fixed-point
iteration.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DivergenceError, DomainError
from .kernels import Kernel
from .model import ControlFunction, Forcing, TimeGrid


@dataclass
class Trajectory:
    """State samples on grid nodes ``grid.t[start:]``."""

    grid: TimeGrid
    x: np.ndarray
    u: np.ndarray            # interval values on the same span
    start: int = 0
    info: dict = field(default_factory=dict)

    @property
    def t(self):
        return self.grid.t[self.start:]

    @property
    def control(self) -> ControlFunction:
        if self.start:
            raise DomainError("trajectory does not span the full grid")
        return ControlFunction(self.grid, self.u)

    def to_csv(self, path):
        unode = np.append(self.u, self.u[-1])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "u"])
            for row in zip(self.t, self.x, unode):
                w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class XiVector:
    t: float
    components: np.ndarray

    def __len__(self):
        return len(self.components)

    def truncate(self, N):
        return XiVector(self.t, self.components[: N + 1])


def _solve_diag(base, c, fn, guess, tol, max_iter):
    """Solve y = base + c fn(y) by damped fixed-point iteration."""
    y = guess
    damping = 1.0
    prev = math.inf
    for it in range(1, max_iter + 1):
        g = base + c * fn(y)
        r = g - y
        if not math.isfinite(g):
            raise DivergenceError("non-finite kernel value in diagonal solve")
        if abs(r) <= tol * max(1.0, abs(y)):
            return g, abs(r), it
        if abs(r) > prev:
            damping = 0.5
        prev = abs(r)
        y = y + damping * r
    raise ConvergenceError(f"diagonal fixed point did not converge in {max_iter} iterations "
                           f"(residual {abs(r):.3e})", residual=abs(r))


def trapezoid_solve(k: Kernel, t, forcing, u, tol=1e-13, max_iter=50):
    """x_i = forcing_i + trapezoidal integral of f(t_i, s, x(s), u(s)) from t[0] to t_i."""
    t = np.asarray(t, float)
    forcing = np.asarray(forcing, float)
    u = np.asarray(u, float)
    n = len(t) - 1
    h = t[1] - t[0]
    x = np.empty(n + 1)
    x[0] = forcing[0]
    worst, iters = 0.0, 0
    for i in range(1, n + 1):
        ti = t[i]
        acc = np.sum(k._dt(0, ti, t[:i], x[:i], u[:i]))
        if i > 1:
            acc += np.sum(k._dt(0, ti, t[1:i], x[1:i], u[: i - 1]))
        base = forcing[i] + 0.5 * h * acc
        ui = u[i - 1]
        xi, res, it = _solve_diag(base, 0.5 * h, lambda y: float(k._dt(0, ti, ti, y, ui)),
                                  x[i - 1], tol, max_iter)
        if not math.isfinite(xi):
            raise DivergenceError("state became non-finite", last_valid_time=float(t[i - 1]))
        x[i] = xi
        worst, iters = max(worst, res), max(iters, it)
    return x, {"max_residual": worst, "max_iterations": iters}


def solve_volterra(k: Kernel, x0: Forcing, u: ControlFunction, grid: TimeGrid, tol=1e-13) -> Trajectory:
    if u.grid != grid:
        raise DomainError("control and trajectory must share one time grid")
    t = grid.t
    x, info = trapezoid_solve(k, t, x0(t), u.values, tol)
    return Trajectory(grid, x, np.asarray(u.values), 0, info)


def solve_parametrized(k: Kernel, X0fun, t: float, u: ControlFunction, grid: TimeGrid, tol=1e-13) -> Trajectory:
    """Solve x(tau) = X0(tau) + int_t^tau f(tau, s, x(s), u(s)) ds on [t, T]."""
    if u.grid != grid:
        raise DomainError("control and trajectory must share one time grid")
    i0 = grid.index(t)
    if i0 >= grid.n_steps:
        raise DomainError("restart time must precede the horizon")
    tt = grid.t[i0:]
    x, info = trapezoid_solve(k, tt, X0fun(tt), u.values[i0:], tol)
    return Trajectory(grid, x, np.asarray(u.values[i0:]), i0, info)


def _interval_trapezoid(k, order, t_eval, ts, xs, us, h):
    """h/2 sum_j [d^order f(t_eval, t_j, x_j, u_j) + d^order f(t_eval, t_{j+1}, x_{j+1}, u_j)]."""
    if len(ts) < 2:
        return 0.0
    left = k._dt(order, t_eval, ts[:-1], xs[:-1], us)
    right = k._dt(order, t_eval, ts[1:], xs[1:], us)
    return 0.5 * h * float(np.sum(left + right))


def compute_xi(traj: Trajectory, k: Kernel, u: ControlFunction | None, t: float, count: int) -> XiVector:
    """xi_n = int_0^t d^(n-1)f/dt^(n-1)(t, s, x(s), u(s)) ds for n = 1..count."""
    if traj.start != 0:
        raise DomainError("xi components need a trajectory starting at 0")
    useq = traj.u if u is None else u.values
    k._check_order(count - 1)
    i = traj.grid.index(t)
    ts, xs = traj.grid.t[: i + 1], traj.x[: i + 1]
    h = traj.grid.h
    comps = np.array([_interval_trapezoid(k, n - 1, t, ts, xs, useq[:i], h) for n in range(1, count + 1)])
    return XiVector(float(t), comps)


def build_X0(x0: Forcing, xi: XiVector, N=None):
    """tau -> x0(tau) + sum_n xi_n (tau - t)^(n-1)/(n-1)!, using N+1 terms (all when N is None)."""
    comps = xi.components if N is None else xi.components[: N + 1]
    comps = np.array(comps, float)
    facts = np.array([math.factorial(n) for n in range(len(comps))], float)
    t0 = xi.t

    def X0(tau):
        tau = np.asarray(tau, float)
        d = tau - t0
        powers = d[..., None] ** np.arange(len(comps))
        return x0(tau) + powers @ (comps / facts)

    return X0


def history_forcing(k: Kernel, x0: Forcing, traj: Trajectory, t: float):
    """Exact restart forcing tau -> x0(tau) + int_0^t f(tau, s, x(s), u(s)) ds.

    This is the infinite-sum forcing with every xi component included.
    """
    i = traj.grid.index(t)
    ts, xs, us = traj.grid.t[: i + 1], traj.x[: i + 1], traj.u[:i]
    h = traj.grid.h

    def X0(tau):
        tau = np.atleast_1d(np.asarray(tau, float))
        mem = np.array([_interval_trapezoid(k, 0, ta, ts, xs, us, h) for ta in tau])
        return x0(tau) + mem

    return X0
