"""Optimal control of scalar Volterra integral equations through truncated ODE systems."""

from .errors import (BoxTooSmallError, ConfigError, ConvergenceError, DivergenceError, DomainError,
                     UnsupportedDerivativeError, VolterraDPError)
from .kernels import (Domain, ExponentialKernel, PolynomialKernel, SeparableKernel, TaylorKernel,
                      UserKernel, ZeroKernel, deriv_t, estimate_MN, eval_kernel, g_coefficient,
                      taylor_truncate)
from .model import ControlFunction, ControlSet, CostSpec, Forcing, TimeGrid
from .volterra import Trajectory, XiVector, build_X0, compute_xi, solve_parametrized, solve_volterra

__all__ = [
    "BoxTooSmallError", "ConfigError", "ConvergenceError", "DivergenceError", "DomainError",
    "UnsupportedDerivativeError", "VolterraDPError", "Domain", "ExponentialKernel", "PolynomialKernel",
    "SeparableKernel", "TaylorKernel", "UserKernel", "ZeroKernel", "deriv_t", "estimate_MN",
    "eval_kernel", "g_coefficient", "taylor_truncate", "ControlFunction", "ControlSet", "CostSpec",
    "Forcing", "TimeGrid", "Trajectory", "XiVector", "build_X0", "compute_xi", "solve_parametrized",
    "solve_volterra",
]
