"""The (N+1)-dimensional ODE system obtained from a degree-N kernel."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, DomainError
from .kernels import Kernel, PolynomialKernel, taylor_truncate
from .model import ControlFunction, Forcing, TimeGrid
from .volterra import Trajectory, XiVector


class TruncatedSystem:
    """xi_n' = g_n(t, x0(t) + xi_1, alpha) + xi_{n+1},  n = 1..N+1,  xi_{N+2} = 0."""

    def __init__(self, kernel: PolynomialKernel, N: int, x0: Forcing, source: Kernel | None = None):
        self.kernel, self.N, self.x0 = kernel, N, x0
        self.source = source if source is not None else kernel

    @property
    def dim(self):
        return self.N + 1

    def g(self, n, t, x, alpha):
        return self.kernel._dt(n - 1, t, t, x, alpha)

    def rhs(self, t, xi, alpha):
        """Vectorized over leading axes of ``xi`` (last axis = component)."""
        xi = np.asarray(xi, float)
        x = self.x0(t) + xi[..., 0]
        out = np.empty(np.broadcast(xi[..., 0], alpha).shape + (self.dim,))
        for n in range(1, self.dim + 1):
            val = self.g(n, t, x, alpha)
            if n < self.dim:
                val = val + xi[..., n]
            out[..., n - 1] = val
        return out

    def closure_residual(self, t, x, alpha):
        """g_{N+2} of the truncated kernel; identically zero by construction."""
        return self.kernel._dt(self.N + 1, t, t, x, alpha)


def build_system(k: Kernel, N: int, x0: Forcing) -> TruncatedSystem:
    return TruncatedSystem(taylor_truncate(k, N), N, x0, source=k)


@dataclass
class TruncatedTrajectory:
    grid: TimeGrid
    xi: np.ndarray           # shape (len(t), N+1)
    u: np.ndarray
    start: int = 0

    @property
    def t(self):
        return self.grid.t[self.start:]

    def to_csv(self, path, x0: Forcing):
        x = recover_state(self, x0).x
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"xi_{n}" for n in range(1, self.xi.shape[1] + 1)] + ["x"])
            for ti, row, xv in zip(self.t, self.xi, x):
                w.writerow([repr(float(ti))] + [repr(float(v)) for v in row] + [repr(float(xv))])


def rk4_step(sys: TruncatedSystem, t, xi, alpha, h):
    k1 = sys.rhs(t, xi, alpha)
    k2 = sys.rhs(t + 0.5 * h, xi + 0.5 * h * k1, alpha)
    k3 = sys.rhs(t + 0.5 * h, xi + 0.5 * h * k2, alpha)
    k4 = sys.rhs(t + h, xi + h * k3, alpha)
    return xi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(sys: TruncatedSystem, u: ControlFunction, xi_init, t_start: float, grid: TimeGrid) -> TruncatedTrajectory:
    """Classical RK4 with the control frozen at its interval value."""
    if u.grid != grid:
        raise DomainError("control and trajectory must share one time grid")
    comps = xi_init.components if isinstance(xi_init, XiVector) else np.asarray(xi_init, float)
    if comps.shape != (sys.dim,):
        raise DomainError(f"initial state needs {sys.dim} components, got {comps.shape}")
    i0 = grid.index(t_start)
    t = grid.t
    h = grid.h
    out = np.empty((grid.n_steps + 1 - i0, sys.dim))
    out[0] = comps
    for m, i in enumerate(range(i0, grid.n_steps)):
        nxt = rk4_step(sys, t[i], out[m], u.values[i], h)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(f"truncated state blew up after t={t[i]}", last_valid_time=float(t[i]))
        out[m + 1] = nxt
    return TruncatedTrajectory(grid, out, np.asarray(u.values[i0:]), i0)


def recover_state(tt: TruncatedTrajectory, x0: Forcing) -> Trajectory:
    """x_[N](t) = x0(t) + xi_1(t)."""
    return Trajectory(tt.grid, x0(tt.t) + tt.xi[:, 0], tt.u, tt.start, {"route": "ode"})


def truncated_trajectory(k: Kernel, N: int, x0: Forcing, u: ControlFunction, grid: TimeGrid) -> Trajectory:
    """Convenience: x_[N] on the full grid through the ODE route."""
    sys = build_system(k, N, x0)
    return recover_state(integrate(sys, u, np.zeros(sys.dim), 0.0, grid), x0)
