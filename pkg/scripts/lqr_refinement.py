"""Grid DP and projected gradient against the Riccati value of x' = u, F = x^2 + u^2.

With x(0) = 1 the optimal cost is tanh(1).  The DP value is printed for a
sequence of refined (time steps, state nodes) pairs.
"""

import argparse
import math

import numpy as np

from volterra_dp import scenario
from volterra_dp.dp import StateBox, reference_optimum, solve_dp
from volterra_dp.model import ControlSet, TimeGrid
from volterra_dp.truncation import build_system


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--levels", type=int, default=4, help="number of refinement levels")
    args = p.parse_args()

    scen = scenario.load("lqr_check")
    exact = math.tanh(1.0)
    sys = build_system(scen.kernel, 0, scen.forcing)
    K = ControlSet(scen.controls.lower, scen.controls.upper, scen.dp.controls)
    print(f"{'steps':>6} {'nodes':>6} {'V(0,0)':>12} {'error':>10}")
    for lvl in range(args.levels):
        steps, nodes = 25 * 2**lvl, 100 * 2**lvl + 1
        box = StateBox([-1.5], [0.5], (nodes,))
        vf, _ = solve_dp(sys, scen.cost, box, K, TimeGrid(1.0, steps))
        V = vf.at(0.0, [0.0])
        print(f"{steps:>6} {nodes:>6} {V:12.6f} {abs(V - exact):10.2e}")
    _, J, best, _ = reference_optimum(scen, np.random.default_rng(scen.seed))
    print(f"projected gradient: J = {J:.6f}, error {abs(J - exact):.2e}, {best.iterations} iterations")


if __name__ == "__main__":
    main()
