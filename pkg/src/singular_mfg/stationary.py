"""Stationary regularized MFG: ergodic HJB by the long-time method, FP kernel by
inverse iteration on the transposed generator, damped Picard coupling, and
eps-continuation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coupling import CouplingParams, g_eps
from .errors import ConvergenceError, DegeneracyError, ValidationError
from .grid import TorusGrid, integrate, laplacian, laplacian_matrix, solve_diffusion
from .hamiltonian import Hamiltonian, alpha_threshold_A5
from .scheme import B_matrix, apply_BT, discrete_hamiltonian

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    theta: float = 0.5
    picard_tol: float = 1e-8
    max_iters: int = 500
    linear_tol: float = 1e-10
    upwinding: bool = True
    cfl: float = 0.9
    dt_max: float = 0.5
    hjb_max_steps: int = 200_000

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise ValidationError(f"theta must lie in (0, 1], got {self.theta}")
        if not self.picard_tol > 0:
            raise ValidationError("picard_tol must be positive")
        if not self.linear_tol > 0:
            raise ValidationError("linear_tol must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be at least 1")


@dataclass
class StationarySolution:
    grid: TorusGrid
    u: np.ndarray
    m: np.ndarray
    hbar: float
    eps: float
    hjb_res: float
    fp_res: float
    iterations: int = 0
    history: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def residuals(self):
        return self.hjb_res, self.fp_res


def hjb_residual(u, hbar, m, model, coupling, grid, upwind=True) -> np.ndarray:
    Hh, _, _ = discrete_hamiltonian(model, grid, u, upwind)
    return -laplacian(u, grid) + Hh - hbar - g_eps(m, coupling)


def solve_hjb_ergodic(
    m: np.ndarray,
    model: Hamiltonian,
    coupling: CouplingParams,
    grid: TorusGrid,
    config: SolverConfig | None = None,
    u0: np.ndarray | None = None,
):
    """Ergodic HJB ``-Lap u + Hh(u) = hbar + g_eps(m)`` by evolving
    ``w_t = Lap w - Hh(w) + g_eps(m)`` (implicit diffusion, explicit Hamiltonian)
    until the residual drops below ``linear_tol``.

    ``hbar`` is the mean of ``Hh(w) - g_eps(m)``, so the integrated equation holds
    exactly at every iterate. Returns ``(u, hbar)`` with ``u`` of zero mean.
    """
    config = config or SolverConfig()
    g = g_eps(m, coupling)
    w = np.zeros(grid.shape) if u0 is None else np.array(u0, dtype=float)
    w -= w.mean()
    history = []
    for step in range(config.hjb_max_steps):
        Hh, cm, cp = discrete_hamiltonian(model, grid, w, config.upwinding)
        hbar = integrate(Hh - g, grid)
        res = float(np.max(np.abs(-laplacian(w, grid) + Hh - g - hbar)))
        history.append(res)
        if res <= config.linear_tol:
            return w, hbar
        if not np.isfinite(res):
            raise ConvergenceError("ergodic HJB iteration produced non-finite values", history)
        speed = float(np.max(np.sum(np.abs(cm) + np.abs(cp), axis=0)))
        dt = config.dt_max if speed == 0 else min(config.dt_max, config.cfl * grid.h / speed)
        w = solve_diffusion(w + dt * (g - Hh), grid, dt)
        w -= w.mean()
    raise ConvergenceError(f"ergodic HJB did not reach {config.linear_tol:g} in {config.hjb_max_steps} steps", history[-50:])


def fp_operator(u, model, grid, upwind=True) -> sp.csr_matrix:
    """``L^T`` with ``L = -Lap + B(u)``."""
    _, cm, cp = discrete_hamiltonian(model, grid, u, upwind)
    L = -laplacian_matrix(grid) + B_matrix(cm, cp, grid)
    return L.T.tocsc()


def _inverse_iteration(lu, start, grid, tol=1e-14, max_iter=20):
    m = start / integrate(start, grid)
    for _ in range(max_iter):
        nxt = lu.solve(m.ravel()).reshape(grid.shape)
        nxt /= integrate(nxt, grid)
        change = float(np.max(np.abs(nxt - m)))
        m = nxt
        if change <= tol * max(1.0, float(np.max(np.abs(m)))):
            break
    return m


def solve_fp_stationary(
    u: np.ndarray,
    model: Hamiltonian,
    grid: TorusGrid,
    config: SolverConfig | None = None,
) -> np.ndarray:
    """Unit-mass kernel vector of ``L^T`` by shifted inverse iteration.

    A second run from a sign-alternating start must land on the same vector;
    disagreement means a kernel of dimension > 1.
    """
    config = config or SolverConfig()
    LT = fp_operator(u, model, grid, config.upwinding)
    shift = 1e-9 * 2 * grid.dim / grid.h**2
    lu = spla.splu((LT + shift * sp.identity(grid.size, format="csc")).tocsc())
    m = _inverse_iteration(lu, np.ones(grid.shape), grid)
    alt = 1.0 + 0.5 * np.cos(2 * np.pi * grid.coords[0]) * (-1.0) ** np.arange(grid.n).reshape((-1,) + (1,) * (grid.dim - 1))
    m_alt = _inverse_iteration(lu, alt, grid)
    if float(np.max(np.abs(m - m_alt))) > 1e-8 * float(np.max(np.abs(m))):
        raise DegeneracyError("Fokker-Planck kernel appears to have dimension > 1")
    if not np.all(np.isfinite(m)):
        raise ConvergenceError("Fokker-Planck inverse iteration produced non-finite values")
    return m


def fp_step_residual(u, m, model, grid, upwind=True) -> float:
    return float(np.max(np.abs(fp_operator(u, model, grid, upwind) @ m.ravel())))


def solve_stationary_eps(
    model: Hamiltonian,
    coupling: CouplingParams,
    grid: TorusGrid,
    config: SolverConfig | None = None,
    m_init: np.ndarray | None = None,
    u_init: np.ndarray | None = None,
) -> StationarySolution:
    """Damped Picard iteration ``m <- (1-theta) m + theta FP(HJB(m))`` from ``m = 1``.

    On convergence the returned ``m`` is the last Fokker-Planck output and
    ``(u, hbar)`` are re-solved against it, so the HJB holds to ``linear_tol``
    and ``fp_res`` measures how far one more FP solve would move ``m``.
    """
    config = config or SolverConfig()
    if not coupling.eps > 0:
        raise ValidationError("the stationary solver needs eps > 0")
    flags = []
    if model.gamma is not None and not coupling.alpha > alpha_threshold_A5(grid.dim, model.gamma):
        flags.append("outside theory: alpha <= alpha_bar(d, gamma)")
    m = np.ones(grid.shape) if m_init is None else np.array(m_init, dtype=float)
    u = None if u_init is None else np.array(u_init, dtype=float)
    history = []
    for it in range(1, config.max_iters + 1):
        u, hbar = solve_hjb_ergodic(m, model, coupling, grid, config, u0=u)
        m_new = solve_fp_stationary(u, model, grid, config)
        upd = float(np.max(np.abs(m_new - m)))
        history.append({"iter": it, "hjb_res": config.linear_tol, "fp_res": upd, "hbar": hbar, "min_m": float(m_new.min())})
        if upd < config.picard_tol:
            m = m_new
            break
        m = (1.0 - config.theta) * m + config.theta * m_new
    else:
        raise ConvergenceError(
            f"stationary Picard iteration did not converge in {config.max_iters} iterations",
            [row["fp_res"] for row in history],
        )
    u, hbar = solve_hjb_ergodic(m, model, coupling, grid, config, u0=u)
    hjb_res = float(np.max(np.abs(hjb_residual(u, hbar, m, model, coupling, grid, config.upwinding))))
    fp_res = float(np.max(np.abs(solve_fp_stationary(u, model, grid, config) - m)))
    history[-1]["hjb_res"] = hjb_res
    return StationarySolution(grid, u, m, hbar, coupling.eps, hjb_res, fp_res, it, history, flags)


@dataclass
class ContinuationResult:
    solutions: list
    report: dict


def epsilon_continuation_stationary(
    model: Hamiltonian,
    coupling: CouplingParams,
    schedule,
    grid: TorusGrid,
    config: SolverConfig | None = None,
) -> ContinuationResult:
    """Solve along a strictly decreasing eps schedule, warm-starting each stage."""
    schedule = [float(e) for e in schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])) or schedule[-1] <= 0:
        raise ValidationError(f"eps schedule must be positive and strictly decreasing, got {schedule}")
    sols = []
    for eps in schedule:
        prev = sols[-1] if sols else None
        sol = solve_stationary_eps(
            model,
            coupling.with_eps(eps),
            grid,
            config,
            m_init=None if prev is None else prev.m,
            u_init=None if prev is None else prev.u,
        )
        log.info("eps=%g converged in %d Picard iterations, hbar=%.10g", eps, sol.iterations, sol.hbar)
        sols.append(sol)
    return ContinuationResult(sols, stationary_limit_report(sols))


def stationary_limit_report(sols) -> dict:
    eta = [float(np.min(s.m + s.eps)) for s in sols]
    rows = []
    for a, b in zip(sols, sols[1:]):
        rows.append(
            {
                "eps_from": a.eps,
                "eps_to": b.eps,
                "du_sup": float(np.max(np.abs(a.u - b.u))),
                "dm_sup": float(np.max(np.abs(a.m - b.m))),
            }
        )
    iters = [s.iterations for s in sols]
    report = {
        "eps": [s.eps for s in sols],
        "cauchy": rows,
        "min_density": eta,
        "hbar": [s.hbar for s in sols],
        "picard_iterations": iters,
        "warm_start_no_worse": all(k <= iters[0] for k in iters[1:]),
    }
    if len(eta) >= 2:
        ratio = eta[-1] / eta[-2]
        report["min_density_ratio"] = ratio
        report["min_density_stable"] = bool(eta[-1] > 0 and 0.5 <= ratio <= 2.0)
    return report
