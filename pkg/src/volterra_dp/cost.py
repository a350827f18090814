"""Cost functional J = int F(t, x, u) dt + F0(x(T)) on the trajectory grid."""

from __future__ import annotations

import csv

import numpy as np

from .errors import DivergenceError, DomainError
from .kernels import Kernel
from .model import ControlFunction, CostSpec, Forcing, TimeGrid
from .truncation import truncated_trajectory
from .volterra import Trajectory


def running_integrand(traj: Trajectory, cs: CostSpec):
    """Left/right integrand values on each interval with the interval's control."""
    t, x, u = traj.t, traj.x, traj.u
    return cs.F(t[:-1], x[:-1], u), cs.F(t[1:], x[1:], u)


def evaluate_cost(traj: Trajectory, u: ControlFunction | None, cs: CostSpec, from_time: float | None = None) -> float:
    """Trapezoidal running cost over [from_time, T] plus the terminal cost."""
    if u is not None and not np.array_equal(u.values[traj.start:], traj.u):
        raise DomainError("control does not match the trajectory it generated")
    start = traj.start if from_time is None else traj.grid.index(from_time)
    if start < traj.start:
        raise DomainError("trajectory is not defined from the requested time")
    off = start - traj.start
    left, right = running_integrand(traj, cs)
    h = traj.grid.h
    run = 0.5 * h * float(np.sum(left[off:] + right[off:]))
    val = run + float(cs.F0(traj.x[-1]))
    if not np.isfinite(val):
        raise DivergenceError("non-finite cost integrand")
    return val


def evaluate_truncated_cost(k: Kernel, N: int, u: ControlFunction, x0: Forcing, cs: CostSpec, grid: TimeGrid) -> float:
    """J_[N]: the cost along the trajectory of the degree-N truncated system."""
    return evaluate_cost(truncated_trajectory(k, N, x0, u, grid), u, cs)


def integrand_to_csv(path, traj: Trajectory, cs: CostSpec):
    vals = cs.F(traj.t, traj.x, np.append(traj.u, traj.u[-1]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "F"])
        for ti, v in zip(traj.t, vals):
            w.writerow([repr(float(ti)), repr(float(v))])
