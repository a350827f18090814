"""Run verification experiments on a truncated Volterra control scenario.

Usage: ``volterra-dp <subcommand> --config <scenario>``.  Subcommands write CSV/JSON artifacts under ``--out`` and exit with 0 when
every check passes, 1 when some check fails and 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import scenario as scen_mod
from .adjoint import build_lambda, gradient_check, solve_adjoint, verify_hamiltonian, verify_psi_lambda
from .bounds import convergence_table, numerical_slack, validate_bounds, z_bound_closed
from .dp import _dp_for, reference_optimum, sandwich_check, value_convergence_check
from .errors import ConfigError, VolterraDPError
from .kernels import taylor_truncate
from .model import ControlFunction, TimeGrid
from .truncation import build_system, integrate, truncated_trajectory
from .volterra import solve_volterra

GRADIENT_STEPS = 100


class Battery:
    """Ordered list of named checks; failures are recorded, not raised."""

    def __init__(self):
        self.checks = []
        self.data = {}

    def add(self, name, passed, **detail):
        self.checks.append({"name": name, "passed": bool(passed), **_plain(detail)})

    def run(self, name, fn):
        try:
            fn()
        except VolterraDPError as exc:
            self.add(name, False, error=f"{type(exc).__name__}: {exc}")

    @property
    def ok(self):
        return all(c["passed"] for c in self.checks)

    def report(self, scen):
        return {"scenario": scen.name, "seed": scen.seed, "config": scen.raw,
                "checks": self.checks, "data": _plain(self.data),
                "passed": sum(c["passed"] for c in self.checks), "failed": sum(not c["passed"] for c in self.checks)}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _mid_control(scen, grid):
    K = scen.controls
    return ControlFunction.constant(grid, 0.5 * (K.lower + K.upper))


def _orders(scen, n_max):
    return [N for N in scen.orders if n_max is None or N <= n_max]


# ------------------------------------------------------------ subcommands

def cmd_solve(scen, out, bat, n_max=None):
    k, x0, grid = scen.kernel, scen.forcing, scen.grid
    u = _mid_control(scen, grid)
    full = solve_volterra(k, x0, u, grid)
    full.to_csv(out / "trajectory.csv")
    slack = numerical_slack(grid.h, np.max(np.abs(full.x)))
    rows = []
    for N in _orders(scen, n_max):
        sys_ = build_system(k, N, x0)
        tt = integrate(sys_, u, np.zeros(sys_.dim), 0.0, grid)
        tt.to_csv(out / f"truncated_N{N}.csv", x0)
        xN = truncated_trajectory(k, N, x0, u, grid)
        xq = solve_volterra(taylor_truncate(k, N), x0, u, grid)
        route = float(np.max(np.abs(xN.x - xq.x)))
        rows.append({"N": N, "max_error_vs_full": float(np.max(np.abs(full.x - xN.x))), "route_gap": route})
        bat.add(f"solve.route_equivalence.N{N}", route <= slack, gap=route, tolerance=slack)
    bat.data["solve"] = {"x_T": float(full.x[-1]), "orders": rows}


def cmd_bounds(scen, out, bat, n_max=None):
    reps = validate_bounds(scen, _orders(scen, n_max))
    with open(out / "bounds.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["kind", "N", "observed", "bound", "margin", "slack", "valid"])
        w.writeheader()
        for r in reps:
            w.writerow({key: (repr(v) if isinstance(v, float) else v) for key, v in r.row().items()})
    (out / "bounds.txt").write_text(convergence_table(reps) + "\n")
    for r in reps:
        bat.add(f"bounds.{r.kind}.N{r.N}", r.valid, observed=r.observed, bound=r.bound, margin=r.margin,
                slack=r.slack)
    k = scen.kernel
    zT = [float(z_bound_closed(k.M(N + 1), k.L0, N, scen.T)) for N in _orders(scen, n_max)]
    bat.add("bounds.z_monotone", all(b <= a * (1 + 1e-12) for a, b in zip(zT, zT[1:])), z_T=zT)
    bat.data["bounds"] = [r.row() for r in reps]


def cmd_dp(scen, out, bat, n_max=None):
    orders = [N for N in scen.dp.orders if n_max is None or N <= n_max]
    sand = []
    u_ref, J_ref, _, _ = reference_optimum(scen, np.random.default_rng(scen.seed))
    for N in orders:
        solved = _dp_for(scen, N)
        _export_slice(solved[2], solved[3], out / f"value_N{N}.csv", out / f"policy_N{N}.csv")

        def one(N=N, solved=solved):
            r = sandwich_check(scen, N, reference=(u_ref, J_ref), solved=solved)
            sand.append(r)
            bat.add(f"dp.sandwich.N{N}", r["holds"], **r)

        bat.run(f"dp.sandwich.N{N}", one)
    vals = []

    def value():
        vals.extend(value_convergence_check(scen, scen.restart_time, orders))
        for r in vals:
            bat.add(f"dp.value.N{r['N']}", r["holds"], **r)

    bat.run("dp.value", value)
    bat.data["dp"] = {"sandwich": sand, "value": vals}


def _export_slice(vf, pol, vpath, ppath):
    """Value and policy at the first DP slice (t = 0)."""
    nodes = vf.box.nodes()
    d = vf.box.dim
    for path, table, label in ((vpath, vf.table[0], "V"), (ppath, pol.table[0], "u")):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"xi_{n}" for n in range(1, d + 1)] + [label])
            for node, v in zip(nodes, table.ravel()):
                w.writerow([repr(float(c)) for c in node] + [repr(float(v))])


def cmd_adjoint(scen, out, bat, n_max=None, J_max=6):
    k, x0, cs, grid = scen.kernel, scen.forcing, scen.cost, scen.grid
    u = _mid_control(scen, grid)
    tr = solve_volterra(k, x0, u, grid)
    adj = solve_adjoint(k, tr, u, cs)
    pair = build_lambda(adj, cs, tr, J_max)
    with open(out / "costate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "psi"] + [f"lambda_{j}" for j in range(1, J_max + 1)])
        for m, t in enumerate(pair.t):
            w.writerow([repr(float(t)), repr(float(pair.psi[m]))] + [repr(float(v)) for v in pair.lam[:, m]])
    h = grid.h
    scale = max(1.0, float(np.max(np.abs(pair.psi))))
    tol = 10 * h * h * scale
    res_by_J = []
    for J in range(1, J_max + 1):
        r = verify_hamiltonian(k, tr, u, cs, pair, J)
        defect = float(np.max(np.abs(r["residual"] + r["tail"])))
        res_by_J.append({"J": J, "max_residual": r["max_residual"], "max_tail": r["max_tail"], "defect": defect})
    bat.add("adjoint.hamiltonian_identity", res_by_J[-1]["defect"] <= tol, tolerance=tol, **res_by_J[-1])
    term = abs(pair.lam[0, -1] - pair.F0_prime) + float(np.max(np.abs(pair.lam[1:, -1])))
    bat.add("adjoint.terminal_conditions", term == 0.0, defect=term)
    routes = float(np.max(np.abs(pair.lam - pair.lam_closed)))
    bat.add("adjoint.lambda_routes", routes <= tol, gap=routes, tolerance=tol)
    for j in (1, 2):
        d = verify_psi_lambda(pair.psi, pair.lam, j, h)
        bat.add(f"adjoint.psi_lambda.j{j}", d <= tol, residual=d, tolerance=tol)
    gg = TimeGrid(grid.T, min(scen.optimizer.steps, GRADIENT_STEPS))
    rng = np.random.default_rng(scen.seed)
    ug = ControlFunction.random_piecewise(gg, scen.controls, rng)
    rel, _, _ = gradient_check(k, x0, cs, ug)
    bat.add("adjoint.gradient_fd", rel <= 1e-4, relative_error=rel)
    bat.data["adjoint"] = {"hamiltonian": res_by_J, "psi_0": float(pair.psi[0]), "gradient_rel_error": rel}


def cmd_verify(scen, out, bat, n_max=None):
    for name, fn in (("solve", cmd_solve), ("bounds", cmd_bounds), ("dp", cmd_dp), ("adjoint", cmd_adjoint)):
        bat.run(name, lambda fn=fn: fn(scen, out, bat, n_max))


COMMANDS = {"solve": cmd_solve, "bounds": cmd_bounds, "dp": cmd_dp, "adjoint": cmd_adjoint, "verify": cmd_verify}


def build_parser():
    p = argparse.ArgumentParser(prog="volterra-dp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="scenario YAML path or bundled name")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--n-max", type=int, default=None, help="largest truncation order to run")
    p.add_argument("--grid", type=int, default=None, help="override the evaluation grid step count")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--json", action="store_true", help="print the JSON report instead of the summary")
    return p


def summary(report):
    lines = [f"scenario {report['scenario']} (seed {report['seed']})"]
    for c in report["checks"]:
        lines.append(f"  {'PASS' if c['passed'] else 'FAIL'}  {c['name']}")
    lines.append(f"{report['passed']} passed, {report['failed']} failed")
    return "\n".join(lines)


def load_scenario(args):
    scen = scen_mod.load(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative", "--seed")
        scen.seed = args.seed
    if args.grid is not None:
        g = args.grid
        if g < 2 or g % scen.dp.steps:
            raise ConfigError(f"grid must be a multiple of dp.steps = {scen.dp.steps}", "--grid")
        try:
            TimeGrid(scen.T, g).index(scen.restart_time)
        except VolterraDPError:
            raise ConfigError("restart_time is not a node of the requested grid", "--grid") from None
        scen = scen.with_steps(g)
    if args.n_max is not None and args.n_max < 0:
        raise ConfigError("must be non-negative", "--n-max")
    return scen


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        scen = load_scenario(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bat = Battery()
    bat.run(args.command, lambda: COMMANDS[args.command](scen, out, bat, args.n_max))
    report = bat.report(scen)
    text = json.dumps(report, indent=2, sort_keys=True)
    (out / f"{args.command}_report.json").write_text(text + "\n")
    (out / f"{args.command}_summary.txt").write_text(summary(report) + "\n")
    print(text if args.json else summary(report))
    return 0 if bat.ok and bat.checks else 1


if __name__ == "__main__":
    sys.exit(main())
