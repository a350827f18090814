import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volterra_dp.errors import DomainError
from volterra_dp.kernels import Domain, ExponentialKernel, SeparableKernel, StateFactor, ZeroKernel
from volterra_dp.model import ControlFunction, ControlSet, Forcing, TimeGrid
from volterra_dp.volterra import (XiVector, build_X0, compute_xi, history_forcing, solve_parametrized,
                                  solve_volterra)

DOM = Domain(1.0, -5.0, 5.0, -1.0, 1.0)


def f_x():
    return SeparableKernel(state_factor=StateFactor(a=1.0), domain=DOM)


def f_u():
    return SeparableKernel(state_factor=StateFactor(a=0.0, b=1.0), domain=DOM)


def test_zero_kernel_returns_forcing():
    g = TimeGrid(1.0, 50)
    x0 = Forcing.polynomial([1.0, -0.5, 0.3])
    tr = solve_volterra(ZeroKernel(DOM), x0, ControlFunction.constant(g, 0.2), g)
    np.testing.assert_allclose(tr.x, x0(g.t), atol=1e-15)


def test_exponential_growth():
    g = TimeGrid(1.0, 200)
    tr = solve_volterra(f_x(), Forcing.constant(1.0), ControlFunction.constant(g, 0.0), g)
    assert abs(tr.x[-1] - math.e) <= 2 * g.h**2 * math.e


@pytest.mark.parametrize("c", [-0.7, 0.0, 0.4])
def test_constant_control_integrates_exactly(c):
    g = TimeGrid(1.0, 40)
    tr = solve_volterra(f_u(), Forcing.constant(0.0), ControlFunction.constant(g, c), g)
    np.testing.assert_allclose(tr.x, c * g.t, atol=1e-14)


def test_second_order_convergence():
    errs = []
    for n in (50, 100, 200, 400):
        g = TimeGrid(1.0, n)
        tr = solve_volterra(f_x(), Forcing.constant(1.0), ControlFunction.constant(g, 0.0), g)
        errs.append(np.max(np.abs(tr.x - np.exp(g.t))))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(np.abs(ratios - 4.0) < 0.2)


def test_xi_vanishes_at_origin():
    g = TimeGrid(1.0, 20)
    k = ExponentialKernel(beta=1.0, sigma=-1.0, a=1.0, domain=DOM)
    tr = solve_volterra(k, Forcing.constant(1.0), ControlFunction.constant(g, 0.0), g)
    assert np.all(compute_xi(tr, k, None, 0.0, 5).components == 0.0)


def test_xi_first_component():
    g = TimeGrid(1.0, 400)
    k = f_x()
    tr = solve_volterra(k, Forcing.constant(1.0), ControlFunction.constant(g, 0.0), g)
    xi = compute_xi(tr, k, None, 1.0, 4)
    assert abs(xi.components[0] - (math.e - 1)) <= 1e-5
    # no t dependence, so higher components vanish
    assert np.all(xi.components[1:] == 0.0)


def test_build_X0_examples():
    x0 = Forcing.polynomial([0.3, 1.0])
    X = build_X0(x0, XiVector(0.5, np.array([2.0, 0.0, 0.0])))
    assert X(0.8) == pytest.approx(x0(0.8) + 2.0)
    X = build_X0(x0, XiVector(0.5, np.zeros(4)))
    np.testing.assert_allclose(X(np.array([0.5, 0.9])), x0(np.array([0.5, 0.9])))
    X = build_X0(Forcing.constant(0.0), XiVector(0.0, np.array([1.0, 1.0])))
    assert X(2.0) == pytest.approx(3.0)
    # truncating to N keeps N+1 terms
    X = build_X0(Forcing.constant(0.0), XiVector(0.0, np.array([1.0, 1.0, 2.0])), N=1)
    assert X(2.0) == pytest.approx(3.0)


def test_parametrized_from_origin_matches_global():
    g = TimeGrid(1.0, 60)
    k = ExponentialKernel(beta=1.0, sigma=-1.0, a=1.0, b=0.5, domain=DOM)
    x0 = Forcing.constant(0.5)
    u = ControlFunction.random_piecewise(g, ControlSet(-1, 1), np.random.default_rng(0))
    glob = solve_volterra(k, x0, u, g)
    par = solve_parametrized(k, build_X0(x0, XiVector(0.0, np.zeros(3))), 0.0, u, g)
    np.testing.assert_allclose(par.x, glob.x, atol=1e-14)


def test_parametrized_zero_kernel():
    g = TimeGrid(1.0, 20)
    X = build_X0(Forcing.constant(0.1), XiVector(0.5, np.array([1.0, -2.0])))
    tr = solve_parametrized(ZeroKernel(DOM), X, 0.5, ControlFunction.constant(g, 0.0), g)
    np.testing.assert_allclose(tr.x, X(tr.t), atol=1e-15)
    assert tr.start == 10 and tr.t[0] == pytest.approx(0.5)


def test_restriction_consistency():
    g = TimeGrid(1.0, 200)
    k = ExponentialKernel(beta=1.0, sigma=-1.0, a=1.0, domain=DOM)
    x0 = Forcing.constant(1.0)
    u = ControlFunction.constant(g, 0.0)
    glob = solve_volterra(k, x0, u, g)
    n = 14
    xi = compute_xi(glob, k, None, 0.5, n)
    par = solve_parametrized(k, build_X0(x0, xi), 0.5, u, g)
    tail = k.M(n) * np.max(np.abs(glob.x)) * 0.5 * 0.5 ** (n - 1) / math.factorial(n - 1)
    assert np.max(np.abs(par.x - glob.x[100:])) <= 5 * (10 * g.h**2 + tail)
    # the exact history forcing is the same curve
    par2 = solve_parametrized(k, history_forcing(k, x0, glob, 0.5), 0.5, u, g)
    np.testing.assert_allclose(par2.x, glob.x[100:], atol=1e-10)


def test_restart_must_be_node():
    g = TimeGrid(1.0, 10)
    with pytest.raises(DomainError):
        solve_parametrized(f_x(), Forcing.constant(0.0), 0.33, ControlFunction.constant(g, 0.0), g)


def test_csv_export(tmp_path):
    g = TimeGrid(1.0, 4)
    tr = solve_volterra(f_u(), Forcing.constant(0.0), ControlFunction.constant(g, 0.5), g)
    tr.to_csv(tmp_path / "tr.csv")
    rows = (tmp_path / "tr.csv").read_text().splitlines()
    assert rows[0] == "t,x,u" and len(rows) == 6


@settings(max_examples=25, deadline=None)
@given(delta=st.floats(-0.5, 0.5), seed=st.integers(0, 10_000))
def test_gronwall_stability(delta, seed):
    g = TimeGrid(1.0, 40)
    k = ExponentialKernel(beta=-0.5, sigma=0.5, a=1.0, b=1.0, domain=DOM)
    u = ControlFunction.random_piecewise(g, ControlSet(-1, 1), np.random.default_rng(seed))
    a = solve_volterra(k, Forcing.constant(0.2), u, g)
    b = solve_volterra(k, Forcing.constant(0.2 + delta), u, g)
    # discrete Gronwall with trapezoid weights: (1 - L h/2)^-1 per implicit step
    L = k.L0
    factor = math.exp(L * g.T) / (1 - L * g.h / 2)
    assert np.max(np.abs(a.x - b.x)) <= abs(delta) * factor + 1e-14
