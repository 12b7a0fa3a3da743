"""Refinement study: heat-reduction sweep error and the representation gap on a
singular run, printed as tables.

    python3 scripts/convergence_study.py [--levels 3]
"""

import argparse

import numpy as np

from singular_mfg.adjoint import representation_check, solve_adjoint
from singular_mfg.coupling import CouplingParams
from singular_mfg.evolution import fixed_point_time, solve_hjb_backward
from singular_mfg.fields import FieldSpec
from singular_mfg.grid import make_grid
from singular_mfg.hamiltonian import LinearDriftHamiltonian, PowerHamiltonian


def heat_errors(levels, T=0.002):
    model = LinearDriftHamiltonian(FieldSpec.from_config(0.0), 1.0, 1)
    off = CouplingParams(1.0, 1.0, weight=0.0)
    rows = []
    for j in range(levels):
        n, nt = 16 * 2**j, 64 * 2**j
        grid = make_grid(1, n)
        uT = np.sin(2 * np.pi * grid.coords[0])
        u0 = solve_hjb_backward(np.ones((nt + 1, n)), model, off, grid, T / nt, uT).u[0]
        rows.append((n, nt, float(np.max(np.abs(u0 - np.exp(-4 * np.pi**2 * T) * uT)))))
    return rows


def representation_gaps(levels, T=0.5):
    model = PowerHamiltonian(FieldSpec.from_config(1.0), FieldSpec.from_config({"const": 0.5, "fourier": [[1, 0.5, 0.0]]}), 1.2, 1)
    cp = CouplingParams(1.5, 1e-2)
    rows = []
    for j in range(levels):
        n = 32 * 2**j
        grid = make_grid(1, n)
        x = grid.coords[0]
        sol = fixed_point_time(model, cp, grid, 0.2 * np.cos(2 * np.pi * x), 1 + 0.5 * np.cos(2 * np.pi * x), T, n)
        adj = solve_adjoint(sol.u, model, grid, [0.25], 0.25, 4 * grid.h, T)
        e = representation_check(sol, adj, model, cp)
        rows.append((n, n, e["values"]["gap"], e["tol"]))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, default=3)
    args = ap.parse_args()

    print("heat reduction, T = 0.002")
    print(f"{'n':>5} {'nt':>5} {'sup error':>12} {'ratio':>7}")
    prev = None
    for n, nt, err in heat_errors(args.levels):
        ratio = "" if prev is None else f"{prev / err:7.3f}"
        print(f"{n:5d} {nt:5d} {err:12.4e} {ratio:>7}")
        prev = err

    print("\nrepresentation gap, T = 0.5, x0 = 0.25, tau = 0.25, width = 4h")
    print(f"{'n':>5} {'nt':>5} {'gap':>12} {'tol':>10}")
    for n, nt, gap, tol in representation_gaps(args.levels):
        print(f"{n:5d} {nt:5d} {gap:12.4e} {tol:10.3e}")


if __name__ == "__main__":
    main()
