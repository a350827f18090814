import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volterra_dp.cost import evaluate_cost, evaluate_truncated_cost, integrand_to_csv
from volterra_dp.errors import DomainError
from volterra_dp.kernels import Domain, PolynomialKernel, SeparableKernel, StateFactor, ZeroKernel
from volterra_dp.model import ControlFunction, ControlSet, CostSpec, Forcing, TimeGrid
from volterra_dp.volterra import Trajectory, solve_volterra

DOM = Domain(1.0, -5.0, 5.0, -1.0, 1.0)


def path(grid, x):
    return Trajectory(grid, np.asarray(x, float), np.zeros(grid.n_steps))


def test_terminal_only():
    g = TimeGrid(1.0, 10)
    cs = CostSpec.quadratic(pf=1.0)
    assert evaluate_cost(path(g, np.full(11, 3.0)), None, cs) == 3.0


def test_unit_running_cost():
    g = TimeGrid(2.0, 7)
    cs = CostSpec.quadratic(c=1.0)
    assert evaluate_cost(path(g, np.zeros(8)), None, cs) == pytest.approx(2.0, abs=1e-15)


def test_quadratic_running_cost():
    for n in (50, 100):
        g = TimeGrid(1.0, n)
        J = evaluate_cost(path(g, g.t), None, CostSpec.quadratic(q=1.0))
        # trapezoid on t^2 overshoots by exactly h^2/6
        assert J - 1 / 3 == pytest.approx(g.h**2 / 6, rel=1e-9)


def test_from_time():
    g = TimeGrid(1.0, 10)
    cs = CostSpec.quadratic(c=1.0)
    assert evaluate_cost(path(g, np.zeros(11)), None, cs, from_time=0.4) == pytest.approx(0.6)


def test_control_must_match():
    g = TimeGrid(1.0, 10)
    with pytest.raises(DomainError):
        evaluate_cost(path(g, np.zeros(11)), ControlFunction.constant(g, 0.5), CostSpec.quadratic(r=1.0))


def test_polynomial_kernel_exact_truncation():
    g = TimeGrid(1.0, 100)
    k = PolynomialKernel.linear([(0.0, 0.5, 0.2), (0.1, 0.3, 0.0), (0.0, 0.2, 0.1)], DOM)
    x0 = Forcing.constant(1.0)
    u = ControlFunction.constant(g, 0.4)
    cs = CostSpec.quadratic(q=1, r=1, qf=1, x_bound=5)
    J = evaluate_cost(solve_volterra(k, x0, u, g), u, cs)
    tr_sup = 3.0
    for N in (2, 4):
        JN = evaluate_truncated_cost(k, N, u, x0, cs, g)
        assert abs(J - JN) <= (cs.L_F + cs.L_F0) * 10 * g.h**2 * tr_sup


def test_zero_kernel_all_orders_equal():
    g = TimeGrid(1.0, 20)
    cs = CostSpec.quadratic(q=1, r=0.5, qf=2)
    u = ControlFunction.random_piecewise(g, ControlSet(-1, 1), np.random.default_rng(3))
    vals = {evaluate_truncated_cost(ZeroKernel(DOM), N, u, Forcing.polynomial([1, 1]), cs, g) for N in range(4)}
    assert len(vals) == 1


def test_integrand_csv(tmp_path):
    g = TimeGrid(1.0, 4)
    integrand_to_csv(tmp_path / "F.csv", path(g, g.t), CostSpec.quadratic(q=1))
    rows = (tmp_path / "F.csv").read_text().splitlines()
    assert rows[0] == "t,F" and float(rows[-1].split(",")[1]) == 1.0


@settings(max_examples=30, deadline=None)
@given(extra=st.floats(0.0, 3.0), seed=st.integers(0, 1000))
def test_monotone_in_running_cost(extra, seed):
    g = TimeGrid(1.0, 20)
    k = SeparableKernel(state_factor=StateFactor(0.5, 1.0), domain=DOM)
    u = ControlFunction.random_piecewise(g, ControlSet(-1, 1), np.random.default_rng(seed))
    tr = solve_volterra(k, Forcing.constant(0.3), u, g)
    lo = CostSpec.quadratic(q=1.0, r=0.2)
    hi = CostSpec.quadratic(q=1.0 + extra, r=0.2 + extra)
    assert evaluate_cost(tr, u, lo) <= evaluate_cost(tr, u, hi)
