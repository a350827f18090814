"""One test per acceptance criterion.  Each records a PASS/FAIL line (shown in
the terminal summary) and then asserts it."""

import math
import time

import numpy as np
import pytest

from volterra_dp import scenario
from volterra_dp.adjoint import build_lambda, gradient_check, solve_adjoint, verify_hamiltonian, verify_psi_lambda
from volterra_dp.bounds import (control_battery, cost_slack, omega_bound, validate_bounds, z_bound_closed,
                                z_bound_series)
from volterra_dp.cli import main
from volterra_dp.cost import evaluate_cost
from volterra_dp.dp import _dp_for, reference_optimum, sandwich_check, value_convergence_check
from volterra_dp.kernels import Domain, ExponentialKernel
from volterra_dp.model import ControlFunction, CostSpec, Forcing, TimeGrid
from volterra_dp.truncation import truncated_trajectory
from volterra_dp.volterra import solve_volterra


def test_c1_bound_form_identity(record):
    t0 = time.perf_counter()
    worst = 0.0
    for L0 in (0.5, 1.0, 2.0):
        for N in range(9):
            for t in np.linspace(0.0, 2.0, 41):
                a, b = z_bound_closed(1.0, L0, N, t), z_bound_series(1.0, L0, N, t)
                if b:
                    worst = max(worst, abs(a - b) / abs(b))
                else:
                    worst = max(worst, abs(a))
    spot = abs(z_bound_closed(1.0, 1.0, 0, 1.0) - (math.e - 2))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and spot <= 1e-12 and dt < 1.0
    record("C1 bound-form identity", ok, f"max rel diff {worst:.2e} (tol 1e-12), z_0(1) err {spot:.1e}, {dt:.2f}s")
    assert ok


def test_c2_state_bound_exp_kernel(record):
    t0 = time.perf_counter()
    scen = scenario.load("exp_kernel")
    k, x0, g = scen.kernel, scen.forcing, scen.grid
    battery = control_battery(scen)
    full = [solve_volterra(k, x0, u, g) for u in battery]
    slack = 10 * g.h**2
    excess, observed = [], []
    for N in range(7):
        z = z_bound_closed(k.M(N + 1), k.L0, N, g.t)
        errs = [np.abs(tr.x - truncated_trajectory(k, N, x0, u, g).x) for u, tr in zip(battery, full)]
        excess.append(max(float(np.max(e - z)) for e in errs))
        observed.append(max(float(np.max(e)) for e in errs))
    monotone = all(b < a for a, b in zip(observed[1:], observed[2:]))
    spot = abs(z_bound_closed(1.0, 1.0, 0, 1.0) - 0.718282) < 1e-6
    dt = time.perf_counter() - t0
    ok = max(excess) <= slack and monotone and spot and dt < 10 and g.h == 1 / 400
    record("C2 state bound (exp_kernel)", ok,
           f"max(err - z_N) {max(excess):.2e} <= {slack:.2e}, monotone beyond N=1: {monotone}, {dt:.1f}s")
    assert ok


def test_c3_polynomial_exactness(record):
    t0 = time.perf_counter()
    scen = scenario.load("poly_exact")
    k, x0, g = scen.kernel, scen.forcing, scen.grid
    rng = np.random.default_rng(scen.seed)
    worst = 0.0
    for _ in range(10):
        u = ControlFunction.random_piecewise(g, scen.controls, rng)
        tr = solve_volterra(k, x0, u, g)
        for N in (2, 3, 4):
            worst = max(worst, float(np.max(np.abs(tr.x - truncated_trajectory(k, N, x0, u, g).x))))
    dt = time.perf_counter() - t0
    ok = worst <= 20 * g.h**2 and dt < 5
    record("C3 polynomial exactness", ok, f"max |x - x_N| (N>=2) {worst:.2e} <= {20 * g.h**2:.2e}, {dt:.1f}s")
    assert ok


def test_c4_cost_bound(record):
    t0 = time.perf_counter()
    scen = scenario.load("exp_kernel")
    k, x0, cs, g = scen.kernel, scen.forcing, scen.cost, scen.grid
    battery = control_battery(scen)
    full = [solve_volterra(k, x0, u, g) for u in battery]
    slack = cost_slack(g.h, max(np.max(np.abs(tr.x)) for tr in full), cs.L_F, cs.L_F0, g.T)
    worst = -np.inf
    for N in range(7):
        om = omega_bound(k.M(N + 1), k.L0, cs.L_F, cs.L_F0, N, g.T)
        for u, tr in zip(battery, full):
            dJ = abs(evaluate_cost(tr, u, cs) - evaluate_cost(truncated_trajectory(k, N, x0, u, g), u, cs))
            worst = max(worst, dJ - om)
    red = max(abs(omega_bound(1.7, L0, 0.0, 2.5, N, 1.0) - 2.5 * z_bound_closed(1.7, L0, N, 1.0))
              for L0 in (0.5, 1.0, 2.0) for N in range(7))
    dt = time.perf_counter() - t0
    ok = worst <= slack and red <= 1e-14 and dt < 10
    record("C4 cost bound (exp_kernel)", ok,
           f"max(|J - J_N| - omega_N) {worst:.2e} <= slack {slack:.2e}, reduction gap {red:.1e}, {dt:.1f}s")
    assert ok


def test_c5_sandwich(record):
    t0 = time.perf_counter()
    scen = scenario.load("exp_kernel")
    r = sandwich_check(scen, 2)
    dt = time.perf_counter() - t0
    ok = r["holds"] and dt < 60
    record("C5 sandwich (exp_kernel, N=2)", ok,
           f"J(u*)={r['J_u']:.6f} eps={r['epsilon']:.2e} 2omega={2 * r['omega']:.2e} J*_ref={r['J_ref']:.6f} "
           f"slack={r['slack'] + r['dp_slack']:.2e}, {dt:.1f}s")
    assert ok


def test_c6_restart_and_value(record):
    t0 = time.perf_counter()
    scen = scenario.load("exp_kernel")
    reps = [r for r in validate_bounds(scen, scen.orders) if r.kind == "restart"]
    restart_ok = all(r.valid for r in reps)
    vals = value_convergence_check(scen, scen.restart_time, [0, 1, 2])
    value_ok = all(v["holds"] for v in vals)
    dt = time.perf_counter() - t0
    ok = restart_ok and value_ok and dt < 120
    worst_r = min(r.margin + r.slack for r in reps)
    record("C6 restart and value (exp_kernel, t=T/2)", ok,
           f"restart min(margin+slack) {worst_r:.2e} (N=0..6); value rows "
           + ", ".join(f"N{v['N']}:{'ok' if v['holds'] else 'NO'}" for v in vals) + f", {dt:.1f}s")
    assert ok


def test_c7_lqr_oracle(record):
    t0 = time.perf_counter()
    scen = scenario.load("lqr_check")
    _, _, vf, _ = _dp_for(scen, 0)
    V = vf.at(0.0, [0.0])
    _, J_pgd, _, _ = reference_optimum(scen, np.random.default_rng(scen.seed))
    exact = math.tanh(1.0)
    dt = time.perf_counter() - t0
    ok = abs(V - exact) <= 2e-2 and abs(J_pgd - exact) <= 1e-3 and dt < 60
    record("C7 LQR oracle", ok, f"|V - tanh 1| {abs(V - exact):.2e} (tol 2e-2), |J_pgd - tanh 1| "
                                f"{abs(J_pgd - exact):.2e} (tol 1e-3), {dt:.1f}s")
    assert ok


def test_c8_costate_correspondence(record):
    t0 = time.perf_counter()
    a = 0.8
    g = TimeGrid(1.0, 400)
    k = ExponentialKernel(beta=0.0, a=a, domain=Domain(1.0, -10, 10, -1, 1))
    cs = CostSpec.quadratic(pf=1.0)
    u = ControlFunction.constant(g, 0.0)
    tr = solve_volterra(k, Forcing.constant(1.0), u, g)
    adj = solve_adjoint(k, tr, u, cs)
    psi_err = float(np.max(np.abs(adj.psi - a * np.exp(a * (1 - g.t)))))
    pair = build_lambda(adj, cs, tr, 2)
    ham = verify_hamiltonian(k, tr, u, cs, pair, 1)["max_residual"]
    pl = [verify_psi_lambda(pair.psi, pair.lam, j, g.h) for j in (1, 2)]
    grads = {}
    for name in scenario.BUNDLED:
        scen = scenario.load(name)
        gg = TimeGrid(scen.T, min(scen.optimizer.steps, 100))
        ug = ControlFunction.random_piecewise(gg, scen.controls, np.random.default_rng(scen.seed))
        grads[name] = gradient_check(scen.kernel, scen.forcing, scen.cost, ug)[0]
    dt = time.perf_counter() - t0
    ok = ham <= 5e-3 and max(pl) <= 1e-3 and max(grads.values()) <= 1e-4 and dt < 30
    record("C8 co-state correspondence", ok,
           f"Hamiltonian residual {ham:.1e} (tol 5e-3), psi err {psi_err:.1e}, psi-lambda j1 {pl[0]:.1e} "
           f"j2 {pl[1]:.1e} (tol 1e-3), max gradient rel err {max(grads.values()):.1e} (tol 1e-4), {dt:.1f}s")
    assert ok


def test_c9_determinism(record, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    code_a = main(["verify", "--config", "lqr_check", "--out", str(a)])
    code_b = main(["verify", "--config", "lqr_check", "--out", str(b)])
    files = sorted(p.name for p in a.iterdir())
    same = [n for n in files if (a / n).read_bytes() == (b / n).read_bytes()]
    ok = code_a == code_b == 0 and len(same) == len(files) and sorted(p.name for p in b.iterdir()) == files
    record("C9 determinism (verify lqr_check twice)", ok, f"{len(same)}/{len(files)} artifacts byte-identical")
    assert ok
