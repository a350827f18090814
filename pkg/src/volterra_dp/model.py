"""Grids, controls, forcing functions and cost specifications."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError(f"horizon must be positive, got {self.T}")
        if self.n_steps < 2:
            raise DomainError(f"need at least 2 steps, got {self.n_steps}")

    @property
    def h(self):
        return self.T / self.n_steps

    @property
    def t(self):
        return np.arange(self.n_steps + 1) * self.h

    def index(self, time, tol=1e-9):
        """Index of the node at ``time``; raises if ``time`` is not a node."""
        i = int(round(time / self.h))
        if abs(i * self.h - time) > tol * max(1.0, self.T) or not 0 <= i <= self.n_steps:
            raise DomainError(f"time {time} is not a node of the grid (h={self.h})")
        return i

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.n_steps * factor)


@dataclass(frozen=True)
class ControlSet:
    lower: float
    upper: float
    count: int = 21

    def __post_init__(self):
        if self.lower > self.upper:
            raise DomainError(f"control set lower bound {self.lower} exceeds upper {self.upper}")
        if self.count < 2:
            raise DomainError("control discretization needs at least 2 values")

    def values(self, count=None):
        return np.linspace(self.lower, self.upper, count or self.count)

    def project(self, u):
        return np.clip(u, self.lower, self.upper)

    def contains(self, u, tol=1e-12):
        u = np.asarray(u)
        return bool(np.all((u >= self.lower - tol) & (u <= self.upper + tol)))


@dataclass(frozen=True)
class ControlFunction:
    """Piecewise-constant control: ``values[j]`` holds on [t_j, t_{j+1})."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_steps,):
            raise DomainError(f"control needs {self.grid.n_steps} interval values, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid, c):
        return cls(grid, np.full(grid.n_steps, float(c)))

    @classmethod
    def random_piecewise(cls, grid, K: ControlSet, rng, blocks=8):
        """Random values held on ``blocks`` equal blocks of intervals."""
        levels = rng.uniform(K.lower, K.upper, size=blocks)
        idx = np.minimum((np.arange(grid.n_steps) * blocks) // grid.n_steps, blocks - 1)
        return cls(grid, levels[idx])

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn`` at interval midpoints."""
        return cls(grid, np.asarray(fn(grid.t[:-1] + 0.5 * grid.h), dtype=float))

    def check(self, K: ControlSet):
        if not K.contains(self.values):
            raise DomainError(f"control leaves K = [{K.lower}, {K.upper}]")
        return self

    def refine(self, factor: int) -> "ControlFunction":
        return ControlFunction(self.grid.refine(factor), np.repeat(self.values, factor))

    def resample(self, grid: TimeGrid) -> "ControlFunction":
        if grid.n_steps % self.grid.n_steps:
            raise DomainError("target grid must be an integer refinement")
        return self.refine(grid.n_steps // self.grid.n_steps)

    def node_values(self):
        """Value at each node (right-continuous; last node takes the last interval)."""
        return np.append(self.values, self.values[-1])


class Forcing:
    """x_0(t), vectorized."""

    def __init__(self, fn: Callable, derivative: Callable | None = None, label="custom"):
        self.fn, self.derivative, self.label = fn, derivative, label

    def __call__(self, t):
        return np.asarray(self.fn(np.asarray(t, float)), float) + 0.0 * np.asarray(t, float)

    @classmethod
    def constant(cls, c):
        c = float(c)
        return cls(lambda t: np.full_like(t, c), lambda t: np.zeros_like(t), label=f"const({c})")

    @classmethod
    def polynomial(cls, coeffs):
        p = np.polynomial.Polynomial([float(c) for c in coeffs])
        return cls(p, p.deriv(), label=f"poly{list(coeffs)}")

    def check_continuity(self, T, n=1000, tol=1e-9):
        """Sampled continuity check: the largest neighbour jump must shrink under refinement."""
        coarse = np.abs(np.diff(self(np.linspace(0.0, T, n + 1))))
        fine = np.abs(np.diff(self(np.linspace(0.0, T, 2 * n + 1))))
        if not (np.all(np.isfinite(coarse)) and np.all(np.isfinite(fine))):
            return False
        return bool(fine.max() <= 0.75 * coarse.max() + tol)


@dataclass(frozen=True)
class CostSpec:
    """Running cost F(t, x, u), terminal cost F0(x) and their derivatives."""

    F: Callable
    F0: Callable
    F_x: Callable
    F_u: Callable
    F0_x: Callable
    L_F: float
    L_F0: float
    coeffs: dict = field(default_factory=dict)

    @classmethod
    def quadratic(cls, q=0.0, r=0.0, p=0.0, w=0.0, c=0.0, qf=0.0, pf=0.0, cf=0.0, x_bound=1.0):
        """F = q x^2 + r u^2 + p x + w u + c,  F0 = qf x^2 + pf x + cf.

        Lipschitz constants are taken over |x| <= x_bound.
        """
        def F(t, x, u):
            return q * x * x + r * u * u + p * x + w * u + c + 0.0 * t

        def F_x(t, x, u):
            return 2 * q * x + p + 0.0 * (t + u)

        def F_u(t, x, u):
            return 2 * r * u + w + 0.0 * (t + x)

        def F0(x):
            return qf * x * x + pf * x + cf

        def F0_x(x):
            return 2 * qf * x + pf

        coeffs = dict(q=q, r=r, p=p, w=w, c=c, qf=qf, pf=pf, cf=cf, x_bound=x_bound)
        return cls(F, F0, F_x, F_u, F0_x,
                   L_F=2 * abs(q) * x_bound + abs(p),
                   L_F0=2 * abs(qf) * x_bound + abs(pf),
                   coeffs=coeffs)
