import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volterra_dp import scenario
from volterra_dp.dp import (StateBox, estimate_box, extract_control, interpolate, sandwich_check, solve_dp,
                            value_convergence_check)
from volterra_dp.errors import BoxTooSmallError, DomainError
from volterra_dp.kernels import Domain, PolynomialKernel, ZeroKernel
from volterra_dp.model import ControlSet, CostSpec, Forcing, TimeGrid
from volterra_dp.truncation import build_system

DOM = Domain(1.0, -10.0, 10.0, -5.0, 5.0)


def f_u():
    return PolynomialKernel.linear([(0.0, 0.0, 1.0)], DOM)


def test_zero_dynamics_control_cost():
    sys = build_system(ZeroKernel(DOM), 0, Forcing.constant(0.0))
    box = StateBox([-1.0], [1.0], (11,))
    vf, pol = solve_dp(sys, CostSpec.quadratic(r=1.0), box, ControlSet(-1, 1, 5), TimeGrid(1.0, 10))
    assert np.all(vf.table == 0.0)
    assert np.all(pol.table == 0.0)


def test_zero_dynamics_terminal_propagates():
    sys = build_system(ZeroKernel(DOM), 0, Forcing.constant(0.0))
    box = StateBox([-1.0], [1.0], (9,))
    vf, _ = solve_dp(sys, CostSpec.quadratic(pf=1.0), box, ControlSet(-1, 1, 3), TimeGrid(1.0, 8))
    for j in range(len(vf.table)):
        np.testing.assert_allclose(vf.table[j], box.axes[0], atol=1e-15)
    assert vf.at(0.5, [0.3]) == pytest.approx(0.3)


def test_terminal_slice():
    x0 = Forcing.constant(0.4)
    sys = build_system(f_u(), 0, x0)
    box = StateBox([-1.0], [1.0], (21,))
    cs = CostSpec.quadratic(q=1, qf=2, pf=0.5)
    vf, _ = solve_dp(sys, cs, box, ControlSet(-1, 1, 3), TimeGrid(1.0, 4))
    np.testing.assert_allclose(vf.table[-1], cs.F0(0.4 + box.axes[0]))


def test_brute_force_three_steps():
    """Every Euler-reachable state is a node, so DP must equal the minimum over all 27 sequences."""
    grid = TimeGrid(1.0, 3)
    h = grid.h
    x0 = Forcing.constant(0.5)
    sys = build_system(f_u(), 0, x0)
    K = ControlSet(-1.0, 1.0, 3)
    cs = CostSpec.quadratic(q=1.0, r=0.5, p=0.3, qf=2.0)
    box = StateBox([-1.0], [1.0], (7,))
    vf, pol = solve_dp(sys, cs, box, K, grid)
    for xi0 in box.axes[0][2:5]:
        best = math.inf
        for seq in itertools.product(K.values(), repeat=3):
            xi, J = xi0, 0.0
            for k, a in enumerate(seq):
                J += float(cs.F(grid.t[k], 0.5 + xi, a)) * h
                xi += h * a
            best = min(best, J + float(cs.F0(0.5 + xi)))
        assert vf.at(0.0, [xi0]) == pytest.approx(best, abs=1e-13)


@pytest.mark.parametrize("N", [0, 1])
def test_value_monotone_under_nested_control_sets(N):
    from volterra_dp.kernels import ExponentialKernel
    k = ExponentialKernel(beta=1.0, a=1.0, b=1.0, domain=Domain(1.0, -5, 5, -1, 1))
    sys = build_system(k, N, Forcing.constant(0.5))
    grid = TimeGrid(1.0, 10)
    box = estimate_box(sys, ControlSet(-1, 1), grid, (21, 11), np.random.default_rng(0))
    cs = CostSpec.quadratic(q=1, r=1, qf=1, x_bound=5)
    vals = [solve_dp(sys, cs, box, ControlSet(-1, 1, n), grid)[0].table for n in (3, 5, 9, 17)]
    for coarse, fine in zip(vals, vals[1:]):
        assert np.all(fine <= coarse + 1e-12)


def test_lqr_refinement_consistency():
    """V(0, 0) approaches the Riccati value tanh(1) as the state and time grids are refined."""
    sys = build_system(f_u(), 0, Forcing.constant(1.0))
    cs = CostSpec.quadratic(q=1.0, r=1.0, x_bound=2.0)
    K = ControlSet(-5.0, 5.0, 101)
    errs = []
    for steps, nodes in ((25, 101), (50, 201), (100, 401)):
        box = StateBox([-1.5], [0.5], (nodes,))
        vf, _ = solve_dp(sys, cs, box, K, TimeGrid(1.0, steps))
        errs.append(abs(vf.at(0.0, [0.0]) - math.tanh(1.0)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] < 2e-2


@settings(max_examples=40, deadline=None)
@given(coef=st.lists(st.floats(-2, 2), min_size=4, max_size=4),
       pts=st.lists(st.tuples(st.floats(-1, 1), st.floats(0, 3)), min_size=1, max_size=6))
def test_interpolation_exact_for_bilinear(coef, pts):
    box = StateBox([-1.0, 0.0], [1.0, 3.0], (5, 4))
    a, b, c, d = coef
    fn = lambda p: a + b * p[:, 0] + c * p[:, 1] + d * p[:, 0] * p[:, 1]
    table = fn(box.nodes()).reshape(box.counts)
    p = np.array(pts)
    np.testing.assert_allclose(interpolate(table, box, p), fn(p), atol=1e-12)


def test_interpolation_clamps_outside():
    box = StateBox([0.0], [1.0], (3,))
    table = np.array([1.0, 2.0, 5.0])
    np.testing.assert_allclose(interpolate(table, box, np.array([[-3.0], [0.25], [7.0]])), [1.0, 1.5, 5.0])


def test_box_validation():
    with pytest.raises(DomainError):
        StateBox([0.0], [0.0], (3,))
    with pytest.raises(DomainError):
        StateBox([0.0], [np.inf], (3,))
    sys = build_system(f_u(), 2, Forcing.constant(0.0))
    with pytest.raises(DomainError):
        solve_dp(build_system(f_u(), 3, Forcing.constant(0.0)), CostSpec.quadratic(q=1), StateBox(
            np.zeros(4), np.ones(4), (2, 2, 2, 2)), ControlSet(-1, 1, 3), TimeGrid(1.0, 2))
    assert sys.dim == 3


def test_box_too_small_is_reported():
    sys = build_system(f_u(), 0, Forcing.constant(0.0))
    grid = TimeGrid(1.0, 10)
    K = ControlSet(-5, 5, 11)
    box = estimate_box(sys, K, grid, (21,), np.random.default_rng(1))
    tiny = StateBox(box.lower * 0.1, box.upper * 0.1, box.counts, box.samples, box.inflation)
    with pytest.raises(BoxTooSmallError) as exc:
        solve_dp(sys, CostSpec.quadratic(pf=-1.0), tiny, K, grid)
    assert exc.value.suggested_inflation > tiny.inflation


def test_box_encloses_samples():
    from volterra_dp.kernels import ExponentialKernel
    k = ExponentialKernel(beta=1.0, a=1.0, b=1.0, domain=Domain(1.0, -5, 5, -1, 1))
    sys = build_system(k, 2, Forcing.constant(0.5))
    box = estimate_box(sys, ControlSet(-1, 1), TimeGrid(1.0, 20), (11, 7, 5), np.random.default_rng(2))
    assert box.contains(box.samples.reshape(-1, 3))
    inner = box.samples.reshape(-1, 3)
    lo, hi = inner.min(axis=0), inner.max(axis=0)
    np.testing.assert_allclose(box.upper - box.lower, 1.25 * (hi - lo), rtol=1e-12)


@pytest.mark.parametrize("lookup", ["nearest", "greedy"])
def test_extracted_control_in_K(lookup):
    sys = build_system(f_u(), 0, Forcing.constant(1.0))
    K = ControlSet(-5.0, 5.0, 41)
    grid = TimeGrid(1.0, 20)
    cs = CostSpec.quadratic(q=1, r=1, x_bound=2)
    box = estimate_box(sys, K, grid, (201,), np.random.default_rng(0))
    vf, pol = solve_dp(sys, cs, box, K, grid)
    ext = extract_control(pol, sys, [0.0], 0.0, vf, cs, TimeGrid(1.0, 40), lookup=lookup, K=K)
    assert K.contains(ext.control.values)
    assert ext.J_truncated == pytest.approx(math.tanh(1.0), abs=5e-2)
    assert abs(ext.epsilon) < 5e-2


def test_value_and_policy_csv(tmp_path):
    sys = build_system(ZeroKernel(DOM), 0, Forcing.constant(0.0))
    box = StateBox([-1.0], [1.0], (3,))
    vf, pol = solve_dp(sys, CostSpec.quadratic(r=1.0), box, ControlSet(-1, 1, 3), TimeGrid(1.0, 2))
    vf.to_csv(tmp_path / "v.csv")
    pol.to_csv(tmp_path / "p.csv")
    assert (tmp_path / "v.csv").read_text().splitlines()[0] == "t,xi_1,V"
    assert len((tmp_path / "v.csv").read_text().splitlines()) == 1 + 3 * 3
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 1 + 2 * 3


def test_poly_sandwich_and_value():
    scen = scenario.load("poly_exact")
    r = sandwich_check(scen, 2)
    assert r["holds"], r
    for row in value_convergence_check(scen, scen.restart_time, [2]):
        assert row["holds"], row
