"""Adjoint (dual Fokker-Planck) probe started from a mollified Dirac mass, and
the representation formula for ``u`` it yields."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coupling import CouplingParams, g_eps, inverse_power
from .errors import ValidationError
from .estimates import entry
from .evolution import Sweep, linearize, solve_fp_forward
from .grid import TorusGrid, forward_diff, gradient, inner, integrate, solve_diffusion
from .hamiltonian import SampleSpec, check_A2
from .scheme import apply_B, discrete_hamiltonian


@dataclass
class AdjointField:
    rho: np.ndarray  # slices k0..nt
    x0: tuple
    tau: float
    moll_width: float
    k0: int
    dt: float
    grid: TorusGrid

    @property
    def steps(self) -> int:
        return self.rho.shape[0] - 1


def periodic_bump(grid: TorusGrid, x0, width: float, images: int = 2) -> np.ndarray:
    """Unit-mass Gaussian of standard deviation ``width`` centred at ``x0``,
    summed over periodic images."""
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (grid.dim,))
    out = np.ones(grid.shape)
    for k in range(grid.dim):
        diff = grid.coords[k] - x0[k]
        axis_sum = sum(np.exp(-0.5 * ((diff + j) / width) ** 2) for j in range(-images, images + 1))
        out = out * axis_sum
    return out / integrate(out, grid)


def time_index(tau: float, dt: float, nt: int) -> int:
    k0 = int(round(tau / dt))
    if not 0 <= k0 < nt or abs(k0 * dt - tau) > 1e-9 * max(1.0, abs(tau)):
        raise ValidationError(f"tau={tau} is not a time node in [0, T) for dt={dt}")
    return k0


def solve_adjoint(u_path, model, grid: TorusGrid, x0, tau: float, moll_width: float, T: float, upwind=True, sweep: Sweep | None = None) -> AdjointField:
    nt = u_path.shape[0] - 1
    dt = T / nt
    if moll_width < 2 * grid.h:
        raise ValidationError(f"moll_width {moll_width:g} is under-resolved; need >= 2h = {2 * grid.h:g}")
    k0 = time_index(tau, dt, nt)
    if sweep is None:
        sweep = linearize(u_path, model, grid, dt, upwind)
    tail = Sweep(sweep.u[k0:], sweep.cm[k0:], sweep.cp[k0:], sweep.max_cfl)
    rho = solve_fp_forward(tail, grid, dt, periodic_bump(grid, x0, moll_width))
    return AdjointField(rho, tuple(np.broadcast_to(np.asarray(x0, float), (grid.dim,)).tolist()), float(tau), float(moll_width), k0, dt, grid)


def _lp(f, p, grid):
    return integrate(np.abs(f) ** p, grid) ** (1.0 / p)


def representation_check(sol, adj: AdjointField, model, coupling: CouplingParams, C: float = 10.0, upwind=True, pq=None, a2_spec=None) -> dict:
    """``<u(tau), rho(tau)> = int_tau^T int (DpH.Du - H + g_eps(m)) rho + int uT rho(T)``.

    ``rhs`` evaluates the continuum integrand (centered ``Du``) against the stored
    ``rho^k``; ``rhs_exact`` is the scheme's own counterpart and closes to
    rounding. Also evaluates the lower bound
    ``u >= -C_fit - ||(m+eps)^-alpha||_{L^inf(L^p)} ||rho||_{L^1(L^q)}``.
    """
    grid = sol.grid
    if adj.grid != grid or abs(adj.dt - sol.dt) > 1e-15:
        raise ValidationError("adjoint and solution live on different grids")
    dt, k0 = sol.dt, adj.k0
    x = grid.coords
    lhs = inner(sol.u[k0], adj.rho[0], grid)
    quad = exact = 0.0
    for j in range(adj.steps):
        k = k0 + j
        uk1 = sol.u[k + 1]
        g = g_eps(sol.m[k], coupling)
        Du = gradient(uk1, grid)
        lag = np.sum(model.DpH(x, Du) * Du, axis=0) - model.H(x, Du)
        quad += dt * inner(lag + g, adj.rho[j], grid)
        Hh, cm, cp = discrete_hamiltonian(model, grid, uk1, upwind)
        exact += dt * inner(apply_B(cm, cp, uk1, grid) - Hh + g, solve_diffusion(adj.rho[j], grid, dt), grid)
    terminal = inner(sol.uT, adj.rho[-1], grid)
    rhs, rhs_exact = quad + terminal, exact + terminal
    tol = C * (grid.h**2 + dt + adj.moll_width**2)
    gap = abs(lhs - rhs)

    d = grid.dim
    p, q = pq if pq is not None else (d + 1.0, (d + 1.0) / d)
    if abs(1 / p + 1 / q - 1) > 1e-12:
        raise ValidationError("(p, q) must be conjugate")
    sing = max(_lp(inverse_power(sol.m[k], coupling, coupling.alpha), p, grid) for k in range(k0, sol.nt))
    rho_q = sum(dt * _lp(r, q, grid) for r in adj.rho[:-1])
    a2 = check_A2(model, a2_spec or SampleSpec())
    C_fit = a2.C1 * (sol.T - adj.tau) - float(np.min(sol.uT))
    lower = -C_fit - coupling.weight * sing * rho_q
    return entry(
        "representation",
        {
            "lhs": lhs,
            "rhs": rhs,
            "gap": gap,
            "rhs_exact": rhs_exact,
            "gap_exact": abs(lhs - rhs_exact),
            "lower_bound": lower,
            "C_fitted": C_fit,
            "singular_norm": sing,
            "rho_L1Lq": rho_q,
        },
        bound=tol,
        passed=gap <= tol and lhs >= lower,
        tol=tol,
        pq=[p, q],
        x0=list(adj.x0),
        tau=adj.tau,
        moll_width=adj.moll_width,
    )


def adjoint_norm_report(adj: AdjointField, nu_list=(0.5,), q_list=(2.0,), sol=None, model=None, coupling=None, upwind=True, p=None, C_fit=None) -> dict:
    grid, dt = adj.grid, adj.dt
    rho = np.maximum(adj.rho, 0.0)
    body = rho[:-1]
    vals = {"dissipation": {}, "L1Lq": {}, "max_int_rho_nu": {}}
    ok = True
    for nu in nu_list:
        if not 0 < nu < 1:
            raise ValidationError("nu values must lie in (0, 1)")
        vals["dissipation"][f"{nu:g}"] = sum(
            dt * integrate(np.sum(forward_diff(r ** (nu / 2), grid) ** 2, axis=0), grid) for r in body
        )
        per_t = [integrate(r**nu, grid) for r in rho]
        vals["max_int_rho_nu"][f"{nu:g}"] = max(per_t)
        ok = ok and max(per_t) <= 1 + 1e-12
    for q in q_list:
        if not q > 1:
            raise ValidationError("q values must exceed 1")
        vals["L1Lq"][f"{q:g}"] = sum(dt * _lp(r, q, grid) for r in body)
    extra = {}
    if sol is not None:
        Hrho = 0.0
        for j in range(adj.steps):
            Hh, _, _ = discrete_hamiltonian(model, grid, sol.u[adj.k0 + j + 1], upwind)
            Hrho += dt * inner(Hh, rho[j], grid)
        vals["int_H_rho"] = Hrho
        d = grid.dim
        p = p or d + 1.0
        sing = max(_lp(inverse_power(sol.m[k], coupling, coupling.alpha), p, grid) for k in range(adj.k0, sol.nt))
        lip = float(np.max(np.sqrt(np.sum(gradient(sol.u, grid) ** 2, axis=0))))
        scale = 1.0 + sing * (1.0 + lip ** (2 * (model.gamma - 1)))
        extra["cor2_ratio"] = Hrho / scale
        if C_fit is not None:
            extra["cor2_C_fitted"] = C_fit
            ok = ok and Hrho <= C_fit * scale * (1 + 1e-12)
    return entry("adjoint_norms", vals, bound=1.0, passed=ok, **extra)


def variance_on_torus(rho, grid: TorusGrid, center: float) -> float:
    """Second moment about ``center`` using the nearest periodic image (d = 1)."""
    d = (grid.coords[0] - center + 0.5) % 1.0 - 0.5
    return integrate(d**2 * rho, grid) / integrate(rho, grid)
