"""Kernel families f(t, s, x, u) with exact t-derivative oracles.

Every kernel is defined on a :class:`Domain` (horizon, state range, control
range).  Derivative bounds ``M(order)`` and the Lipschitz constant ``L0`` are
suprema over the rectangle ``(t, s) in [0, T]^2`` rather than the triangle
``s <= t``, so they stay valid for Taylor expansions about either ``t = 0``
or the diagonal ``t = s``.

All evaluation methods broadcast over numpy arrays.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, UnsupportedDerivativeError

INF = math.inf


@dataclass(frozen=True)
class Domain:
    T: float = 1.0
    x_lo: float = -1.0
    x_hi: float = 1.0
    u_lo: float = -1.0
    u_hi: float = 1.0

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError(f"horizon must be positive, got {self.T}")
        if self.x_lo > self.x_hi or self.u_lo > self.u_hi:
            raise DomainError("domain bounds are inverted")

    @property
    def x_abs(self):
        return max(abs(self.x_lo), abs(self.x_hi))

    def corners(self):
        return list(itertools.product((self.x_lo, self.x_hi), (self.u_lo, self.u_hi)))


def _sup_affine(a, b, c, dom: Domain):
    """sup |a x + b u + c| over the (x, u) box; attained at a corner."""
    return max(abs(a * x + b * u + c) for x, u in dom.corners())


class Kernel:
    """Base class.  Subclasses implement ``_dt``, ``_dtx``, ``_dtu`` and the bounds."""

    family = "abstract"
    deriv_max: float = INF

    def __init__(self, domain: Domain | None = None):
        self.domain = domain or Domain()

    def __call__(self, t, s, x, u):
        return self._dt(0, t, s, x, u)

    def _check_order(self, order):
        if order < 0 or int(order) != order:
            raise UnsupportedDerivativeError(f"derivative order must be a natural number, got {order}")
        if order > self.deriv_max:
            raise UnsupportedDerivativeError(
                f"{self.family} kernel provides t-derivatives up to order {self.deriv_max}, "
                f"requested {order}"
            )

    def deriv_t(self, order, t, s, x, u):
        self._check_order(order)
        return self._dt(order, t, s, x, u)

    def deriv_tx(self, order, t, s, x, u):
        """d^order/dt^order of df/dx."""
        self._check_order(order)
        return self._dtx(order, t, s, x, u)

    def deriv_tu(self, order, t, s, x, u):
        self._check_order(order)
        return self._dtu(order, t, s, x, u)

    def M(self, order):
        """Bound on |d^order f / dt^order| over the domain."""
        self._check_order(order)
        return self._sup(order)

    def Mx(self, order):
        """Bound on |d^order/dt^order df/dx| over the domain."""
        self._check_order(order)
        return self._sup_x(order)

    @property
    def L0(self):
        return self.Mx(0)

    # closed-form bound available?
    exact_bounds = True

    def with_domain(self, domain: Domain) -> "Kernel":
        raise NotImplementedError

    def _dt(self, order, t, s, x, u):
        raise NotImplementedError

    def _dtx(self, order, t, s, x, u):
        raise NotImplementedError

    def _dtu(self, order, t, s, x, u):
        raise NotImplementedError

    def _sup(self, order):
        return sampled_sup(self, order, which="t")

    def _sup_x(self, order):
        return sampled_sup(self, order, which="x")


class ZeroKernel(Kernel):
    family = "polynomial"

    def with_domain(self, domain):
        return ZeroKernel(domain)

    def _dt(self, order, t, s, x, u):
        return np.zeros(np.broadcast(t, s, x, u).shape)[()] * 1.0

    _dtx = _dtu = _dt

    def _sup(self, order):
        return 0.0

    _sup_x = _sup


class ExponentialKernel(Kernel):
    """f = exp(beta t + sigma s) (a x + b u + c).

    Covers e^t x (beta=1), e^{t-s} x (sigma=-1) and the convolution kernel
    e^{-(t-s)} (x + u) (beta=-1, sigma=1).
    """

    family = "exponential-convolution"

    def __init__(self, beta=1.0, sigma=0.0, a=1.0, b=0.0, c=0.0, domain=None):
        super().__init__(domain)
        self.beta, self.sigma, self.a, self.b, self.c = map(float, (beta, sigma, a, b, c))

    def with_domain(self, domain):
        return ExponentialKernel(self.beta, self.sigma, self.a, self.b, self.c, domain)

    def _exp(self, order, t, s):
        return self.beta**order * np.exp(self.beta * t + self.sigma * s)

    def _dt(self, order, t, s, x, u):
        return self._exp(order, t, s) * (self.a * x + self.b * u + self.c)

    def _dtx(self, order, t, s, x, u):
        return self._exp(order, t, s) * self.a * np.ones_like(np.asarray(x, float))

    def _dtu(self, order, t, s, x, u):
        return self._exp(order, t, s) * self.b * np.ones_like(np.asarray(u, float))

    def _exp_sup(self, order):
        T = self.domain.T
        return abs(self.beta) ** order * math.exp(max(0.0, self.beta * T) + max(0.0, self.sigma * T))

    def _sup(self, order):
        return self._exp_sup(order) * _sup_affine(self.a, self.b, self.c, self.domain)

    def _sup_x(self, order):
        return self._exp_sup(order) * abs(self.a)


# ---------------------------------------------------------------- separable

class ExpFactor:
    def __init__(self, rate=1.0):
        self.rate = float(rate)

    def deriv(self, order, t):
        return self.rate**order * np.exp(self.rate * np.asarray(t, float))

    def sup(self, order, T):
        return abs(self.rate) ** order * max(1.0, math.exp(self.rate * T))


class SinFactor:
    """sin(freq t + phase); use phase = pi/2 for cosine."""

    def __init__(self, freq=1.0, phase=0.0):
        self.freq, self.phase = float(freq), float(phase)

    def deriv(self, order, t):
        return self.freq**order * np.sin(self.freq * np.asarray(t, float) + self.phase + order * math.pi / 2)

    def sup(self, order, T):
        return abs(self.freq) ** order


class PolyFactor:
    """sum_k coeffs[k] t^k."""

    def __init__(self, coeffs=(1.0,)):
        self.coeffs = [float(c) for c in coeffs]

    def deriv(self, order, t):
        t = np.asarray(t, float)
        out = np.zeros_like(t)
        for k in range(order, len(self.coeffs)):
            out = out + self.coeffs[k] * math.perm(k, order) * t ** (k - order)
        return out

    def sup(self, order, T):
        return sum(abs(c) * math.perm(k, order) * T ** (k - order)
                   for k, c in enumerate(self.coeffs) if k >= order)

    @property
    def degree(self):
        nz = [k for k, c in enumerate(self.coeffs) if c != 0.0]
        return nz[-1] if nz else -1


class StateFactor:
    """h(x, u) = a x + b u + c + d sin(x)."""

    def __init__(self, a=1.0, b=0.0, c=0.0, d=0.0):
        self.a, self.b, self.c, self.d = map(float, (a, b, c, d))

    def value(self, x, u):
        return self.a * x + self.b * u + self.c + self.d * np.sin(x)

    def dx(self, x, u):
        return self.a + self.d * np.cos(x) + 0.0 * np.asarray(u, float)

    def du(self, x, u):
        return self.b + 0.0 * np.asarray(x, float) + 0.0 * np.asarray(u, float)

    def sup(self, dom: Domain):
        return _sup_affine(self.a, self.b, self.c, dom) + abs(self.d) * min(1.0, dom.x_abs)

    def sup_x(self, dom: Domain):
        return abs(self.a) + abs(self.d)


class SeparableKernel(Kernel):
    """f = p(t) q(s) h(x, u)."""

    family = "separable-product"

    def __init__(self, time_factor=None, memory_factor=None, state_factor=None, domain=None):
        super().__init__(domain)
        self.p = time_factor or PolyFactor((1.0,))
        self.q = memory_factor or PolyFactor((1.0,))
        self.h = state_factor or StateFactor()

    def with_domain(self, domain):
        return SeparableKernel(self.p, self.q, self.h, domain)

    def _dt(self, order, t, s, x, u):
        return self.p.deriv(order, t) * self.q.deriv(0, s) * self.h.value(x, u)

    def _dtx(self, order, t, s, x, u):
        return self.p.deriv(order, t) * self.q.deriv(0, s) * self.h.dx(x, u)

    def _dtu(self, order, t, s, x, u):
        return self.p.deriv(order, t) * self.q.deriv(0, s) * self.h.du(x, u)

    def _sup(self, order):
        T = self.domain.T
        return self.p.sup(order, T) * self.q.sup(0, T) * self.h.sup(self.domain)

    def _sup_x(self, order):
        T = self.domain.T
        return self.p.sup(order, T) * self.q.sup(0, T) * self.h.sup_x(self.domain)


# --------------------------------------------------------------- polynomial

class LinearCoefficient:
    """c(s, x, u) = const + x_coef x + u_coef u (independent of s)."""

    def __init__(self, const=0.0, x_coef=0.0, u_coef=0.0):
        self.const, self.x_coef, self.u_coef = float(const), float(x_coef), float(u_coef)

    def value(self, s, x, u):
        return self.const + self.x_coef * x + self.u_coef * u + 0.0 * np.asarray(s, float)

    def dx(self, s, x, u):
        return self.x_coef + 0.0 * (np.asarray(s, float) + x + u)

    def du(self, s, x, u):
        return self.u_coef + 0.0 * (np.asarray(s, float) + x + u)

    def sup(self, dom):
        return _sup_affine(self.x_coef, self.u_coef, self.const, dom)

    def sup_x(self, dom):
        return abs(self.x_coef)

    def is_zero(self):
        return self.const == self.x_coef == self.u_coef == 0.0


class TaylorKernel(Kernel):
    """Degree-N Taylor polynomial in t of a parent kernel.

    ``center="diagonal"`` expands each f(., s, x, u) about t = s:

        f_[N](t, s, x, u) = sum_{j<=N} (t - s)^j / j! * d^j f/dt^j (s, s, x, u),

    so the diagonal coefficients g_1..g_{N+1} coincide with the parent's and
    the remainder is bounded by M(N+1) (t - s)^{N+1} / (N+1)!.
    ``center="origin"`` expands about t = 0 with s held fixed; the parent is
    then evaluated at (0, s), off the triangle, so its suprema must cover the
    full square [0,T]^2 (all built-in families do).  Either way the result
    is a polynomial of degree N in t.
    """

    family = "polynomial-in-t"

    def __init__(self, parent: Kernel, N: int, center="diagonal"):
        super().__init__(parent.domain)
        if center not in ("diagonal", "origin"):
            raise DomainError(f"unknown expansion center {center!r}")
        self.parent, self.N, self.center = parent, N, center

    def with_domain(self, domain):
        return TaylorKernel(self.parent.with_domain(domain), self.N, self.center)

    @property
    def degree(self):
        return self.N

    def _expand(self, fn, order, t, s, x, u):
        t = np.asarray(t, float)
        s = np.asarray(s, float)
        c = s if self.center == "diagonal" else np.zeros_like(s)
        d = t - c
        out = 0.0
        for j in range(order, self.N + 1):
            out = out + d ** (j - order) / math.factorial(j - order) * fn(j, c, s, x, u)
        return out + np.zeros(np.broadcast(t, s, x, u).shape)

    def _dt(self, order, t, s, x, u):
        return self._expand(self.parent._dt, order, t, s, x, u)

    def _dtx(self, order, t, s, x, u):
        return self._expand(self.parent._dtx, order, t, s, x, u)

    def _dtu(self, order, t, s, x, u):
        return self._expand(self.parent._dtu, order, t, s, x, u)

    def _sup(self, order):
        T = self.domain.T
        return sum(T ** (j - order) / math.factorial(j - order) * self.parent.M(j)
                   for j in range(order, self.N + 1))

    def _sup_x(self, order):
        T = self.domain.T
        return sum(T ** (j - order) / math.factorial(j - order) * self.parent.Mx(j)
                   for j in range(order, self.N + 1))


class PolynomialKernel(Kernel):
    """f = sum_j t^j c_j(s, x, u).  Exact derivatives of every order."""

    family = "polynomial-in-t"

    def __init__(self, coeffs: Sequence, domain=None):
        super().__init__(domain)
        self.coeffs = list(coeffs)

    @classmethod
    def linear(cls, rows, domain=None):
        """``rows[j] = (const, x_coef, u_coef)`` for the t^j coefficient."""
        return cls([LinearCoefficient(*r) for r in rows], domain)

    def with_domain(self, domain):
        return PolynomialKernel(self.coeffs, domain)

    @property
    def degree(self):
        nz = [j for j, c in enumerate(self.coeffs) if not c.is_zero()]
        return nz[-1] if nz else -1

    def _combine(self, order, t, attr, s, x, u):
        t = np.asarray(t, float)
        out = 0.0
        for j in range(order, len(self.coeffs)):
            out = out + math.perm(j, order) * t ** (j - order) * getattr(self.coeffs[j], attr)(s, x, u)
        return out + np.zeros(np.broadcast(t, s, x, u).shape)

    def _dt(self, order, t, s, x, u):
        return self._combine(order, t, "value", s, x, u)

    def _dtx(self, order, t, s, x, u):
        return self._combine(order, t, "dx", s, x, u)

    def _dtu(self, order, t, s, x, u):
        return self._combine(order, t, "du", s, x, u)

    def _sup(self, order):
        T = self.domain.T
        return sum(math.perm(j, order) * T ** (j - order) * c.sup(self.domain)
                   for j, c in enumerate(self.coeffs) if j >= order)

    def _sup_x(self, order):
        T = self.domain.T
        return sum(math.perm(j, order) * T ** (j - order) * c.sup_x(self.domain)
                   for j, c in enumerate(self.coeffs) if j >= order)


# ----------------------------------------------------------- user composite

class UserKernel(Kernel):
    """Kernel from user-supplied derivative callables ``d(order, t, s, x, u)``.

    Bounds fall back to sampled suprema with a safety factor unless a table
    is given.  Call :meth:`validate` to finite-difference check the callables.
    """

    family = "user-composite"
    exact_bounds = False

    def __init__(self, deriv: Callable, deriv_x: Callable | None = None, deriv_u: Callable | None = None,
                 deriv_max=INF, L0=None, M_table=None, domain=None):
        super().__init__(domain)
        self._deriv, self._deriv_x, self._deriv_u = deriv, deriv_x, deriv_u
        self.deriv_max = deriv_max
        self._L0 = L0
        self._M_table = dict(M_table or {})

    def with_domain(self, domain):
        return UserKernel(self._deriv, self._deriv_x, self._deriv_u, self.deriv_max, None, None, domain)

    def _dt(self, order, t, s, x, u):
        return np.asarray(self._deriv(order, t, s, x, u), float)

    def _dtx(self, order, t, s, x, u):
        if self._deriv_x is None:
            raise UnsupportedDerivativeError("user kernel has no x-derivative callable")
        return np.asarray(self._deriv_x(order, t, s, x, u), float)

    def _dtu(self, order, t, s, x, u):
        if self._deriv_u is None:
            raise UnsupportedDerivativeError("user kernel has no u-derivative callable")
        return np.asarray(self._deriv_u(order, t, s, x, u), float)

    def _sup(self, order):
        if order in self._M_table:
            return float(self._M_table[order])
        return sampled_sup(self, order, which="t")

    def _sup_x(self, order):
        if order == 0 and self._L0 is not None:
            return float(self._L0)
        return sampled_sup(self, order, which="x")

    def validate(self, max_order=4, rel_tol=1e-6, n=5):
        """Compare each derivative callable with a central difference of the one below it."""
        pts = sample_points(self.domain, n)
        top = int(min(self.deriv_max, max_order))
        for order in range(1, top + 1):
            err = fd_derivative_error(self, order, pts)
            if err > rel_tol:
                raise ValueError(f"d^{order}f/dt^{order} disagrees with finite differences (rel err {err:.2e})")
        if self._deriv_x is not None:
            t, s, x, u = pts
            hx = 1e-6 * np.maximum(1.0, np.abs(x))
            fd = (self._dt(0, t, s, x + hx, u) - self._dt(0, t, s, x - hx, u)) / (2 * hx)
            err = np.max(np.abs(fd - self._dtx(0, t, s, x, u)) / np.maximum(1.0, np.abs(fd)))
            if err > rel_tol * 100:
                raise ValueError(f"df/dx disagrees with finite differences (rel err {err:.2e})")
        return True


# ---------------------------------------------------------------- sampling

def sample_points(domain: Domain, n=9, n_u=5):
    """Meshgrid of (t, s, x, u) over [0,T]^2 x [x_lo,x_hi] x [u_lo,u_hi], flattened."""
    T = domain.T
    ts = np.linspace(0.0, T, n)
    xs = np.linspace(domain.x_lo, domain.x_hi, n)
    us = np.linspace(domain.u_lo, domain.u_hi, n_u)
    t, s, x, u = np.meshgrid(ts, ts, xs, us, indexing="ij")
    return t.ravel(), s.ravel(), x.ravel(), u.ravel()


def sampled_sup(k: Kernel, order, which="t", n=9, safety=1.1):
    t, s, x, u = sample_points(k.domain, n)
    vals = k._dt(order, t, s, x, u) if which == "t" else k._dtx(order, t, s, x, u)
    return safety * float(np.max(np.abs(vals)))


def fd_derivative_error(k: Kernel, order, pts, step=1e-4):
    """Max relative error of d^order f against a central difference of d^(order-1) f."""
    t, s, x, u = pts
    fd = (k._dt(order - 1, t + step, s, x, u) - k._dt(order - 1, t - step, s, x, u)) / (2 * step)
    exact = k._dt(order, t, s, x, u)
    return float(np.max(np.abs(fd - exact) / np.maximum(1.0, np.abs(exact))))


# ----------------------------------------------------------------- ops

def _in_domain(k: Kernel, t, s, u, tol=1e-12):
    T = k.domain.T
    if not (-tol <= s <= t + tol and t <= T + tol):
        raise DomainError(f"need 0 <= s <= t <= T, got t={t}, s={s}, T={T}")
    if not (k.domain.u_lo - tol <= u <= k.domain.u_hi + tol):
        raise DomainError(f"control {u} outside [{k.domain.u_lo}, {k.domain.u_hi}]")


def eval_kernel(k: Kernel, t, s, x, u):
    _in_domain(k, t, s, u)
    return float(k._dt(0, t, s, x, u))


def deriv_t(k: Kernel, order, t, s, x, u):
    k._check_order(order)
    _in_domain(k, t, s, u)
    return float(k._dt(order, t, s, x, u))


def g_coefficient(k: Kernel, n, t, x, u):
    """g_n(t, x, u): the (n-1)-th t-derivative of f on the diagonal s = t."""
    if n < 1:
        raise DomainError(f"coefficient index starts at 1, got {n}")
    k._check_order(n - 1)
    return k._dt(n - 1, t, t, x, u)


def taylor_truncate(k: Kernel, N: int, center="diagonal") -> Kernel:
    """Degree-N Taylor truncation f_[N] in t (see :class:`TaylorKernel`)."""
    if N < 0:
        raise DomainError(f"truncation order must be >= 0, got {N}")
    if isinstance(k, ZeroKernel):
        return k
    if isinstance(k, PolynomialKernel) and k.degree <= N:
        return k
    if isinstance(k, TaylorKernel) and k.N <= N:
        return k
    if isinstance(k, PolynomialKernel) and center == "origin":
        return PolynomialKernel(k.coeffs[: N + 1], k.domain)
    k._check_order(N + 1)
    return TaylorKernel(k, N, center)


def estimate_MN(k: Kernel, N: int, n=9, safety=1.1):
    """Bound on |d^(N+1) f / dt^(N+1)|: closed form when the family has one."""
    k._check_order(N + 1)
    if k.exact_bounds:
        return k.M(N + 1)
    return sampled_sup(k, N + 1, "t", n=n, safety=safety)
