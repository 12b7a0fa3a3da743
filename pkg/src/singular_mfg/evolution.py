"""Time-dependent regularized MFG on ``[0, T]``.

HJB step (backward, implicit diffusion, explicit Hamiltonian):

    (I - dt Lap) u^k = u^{k+1} - dt Hh(u^{k+1}) + dt g_eps(m^k)

FP step (forward) is the exact transpose of that step's linearization:

    m^{k+1} = (I - dt B_{k+1}^T) (I - dt Lap)^{-1} m^k

so mass is conserved exactly and positivity holds while the CFL number of the
explicit drift stays below one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .coupling import CouplingParams, g_eps
from .errors import ConvergenceError, SingularityError, ValidationError
from .grid import TorusGrid, gradient, solve_diffusion
from .hamiltonian import Hamiltonian, gamma_gate_A4
from .scheme import apply_BT, cfl_number, discrete_hamiltonian
from .stationary import SolverConfig

log = logging.getLogger(__name__)


class StabilityError(ConvergenceError):
    pass


@dataclass
class TimeDependentSolution:
    grid: TorusGrid
    u: np.ndarray
    m: np.ndarray
    T: float
    uT: np.ndarray
    m0: np.ndarray
    eps: float
    iterations: int = 0
    residual: float = 0.0
    history: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    max_cfl: float = 0.0

    @property
    def nt(self) -> int:
        return self.u.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)


@dataclass
class Sweep:
    """Backward HJB output plus the frozen linearization coefficients per step."""

    u: np.ndarray
    cm: list
    cp: list
    max_cfl: float


def solve_hjb_backward(
    m_path: np.ndarray,
    model: Hamiltonian,
    coupling: CouplingParams,
    grid: TorusGrid,
    dt: float,
    uT: np.ndarray,
    upwind: bool = True,
) -> Sweep:
    nt = m_path.shape[0] - 1
    u = np.empty_like(m_path)
    u[nt] = uT
    cms, cps = [None] * (nt + 1), [None] * (nt + 1)
    worst = 0.0
    for k in range(nt - 1, -1, -1):
        Hh, cm, cp = discrete_hamiltonian(model, grid, u[k + 1], upwind)
        cms[k + 1], cps[k + 1] = cm, cp
        worst = max(worst, cfl_number(cm, cp, grid, dt))
        u[k] = solve_diffusion(u[k + 1] - dt * Hh + dt * g_eps(m_path[k], coupling), grid, dt)
        if not np.all(np.isfinite(u[k])):
            raise StabilityError(f"HJB sweep produced non-finite values at step {k} (CFL {worst:.3g})")
    if worst > 1.0:
        log.warning("explicit Hamiltonian CFL number %.3g exceeds 1; monotonicity not guaranteed", worst)
    return Sweep(u, cms, cps, worst)


def solve_fp_forward(sweep: Sweep, grid: TorusGrid, dt: float, m0: np.ndarray) -> np.ndarray:
    """Forward transpose sweep; ``sweep`` carries ``u`` and its linearization."""
    nt = sweep.u.shape[0] - 1
    m = np.empty_like(sweep.u)
    m[0] = m0
    for k in range(nt):
        mu = solve_diffusion(m[k], grid, dt)
        m[k + 1] = mu - dt * apply_BT(sweep.cm[k + 1], sweep.cp[k + 1], mu, grid)
        if not np.all(np.isfinite(m[k + 1])):
            raise StabilityError(f"FP sweep produced non-finite values at step {k}")
    return m


def linearize(u_path, model, grid, dt, upwind=True) -> Sweep:
    """Rebuild the sweep coefficients of a stored ``u`` path."""
    nt = u_path.shape[0] - 1
    cms, cps = [None] * (nt + 1), [None] * (nt + 1)
    worst = 0.0
    for k in range(1, nt + 1):
        _, cms[k], cps[k] = discrete_hamiltonian(model, grid, u_path[k], upwind)
        worst = max(worst, cfl_number(cms[k], cps[k], grid, dt))
    return Sweep(u_path, cms, cps, worst)


def heat_path(m0, grid, dt, nt) -> np.ndarray:
    out = np.empty((nt + 1, *grid.shape))
    out[0] = m0
    for k in range(nt):
        out[k + 1] = solve_diffusion(out[k], grid, dt)
    return out


def lipschitz_norm(u_path, grid) -> float:
    Du = gradient(u_path, grid)
    return float(np.max(np.sqrt(np.sum(Du**2, axis=0))))


def _validate_data(grid, uT, m0, T, nt):
    if np.shape(uT) != grid.shape or np.shape(m0) != grid.shape:
        raise ValidationError("uT and m0 must live on the grid")
    if not T > 0 or nt < 1:
        raise ValidationError(f"need T > 0 and nt >= 1, got T={T}, nt={nt}")
    if not np.all(np.asarray(m0) > 0):
        raise ValidationError("m0 must be strictly positive")


def fixed_point_time(
    model: Hamiltonian,
    coupling: CouplingParams,
    grid: TorusGrid,
    uT: np.ndarray,
    m0: np.ndarray,
    T: float,
    nt: int,
    config: SolverConfig | None = None,
    m_init: np.ndarray | None = None,
) -> TimeDependentSolution:
    """Damped Picard on the density path, started from the heat flow of ``m0``.

    The returned ``m`` is the last FP output and ``u`` is re-solved against it.
    """
    config = config or SolverConfig()
    _validate_data(grid, uT, m0, T, nt)
    m0 = np.asarray(m0, dtype=float) / np.sum(m0) * grid.size
    if not coupling.eps > 0:
        raise ValidationError("the time-dependent solver needs eps > 0")
    dt = T / nt
    flags = []
    if model.gamma is not None and not gamma_gate_A4(model.gamma, grid.dim):
        flags.append("outside theory: gamma violates 1 < gamma < (d+2)/(d+1)")
    if coupling.alpha == 1:
        flags.append("outside estimate hypotheses: alpha = 1")
    m = heat_path(m0, grid, dt, nt) if m_init is None else np.array(m_init, dtype=float)
    m[0] = m0
    history = []
    for it in range(1, config.max_iters + 1):
        sweep = solve_hjb_backward(m, model, coupling, grid, dt, uT, config.upwinding)
        m_new = solve_fp_forward(sweep, grid, dt, m0)
        upd = float(np.max(np.abs(m_new - m)))
        history.append(
            {
                "iter": it,
                "update_norm": upd,
                "min_m": float(m_new.min()),
                "max_u": float(sweep.u.max()),
                "lipschitz_norm": lipschitz_norm(sweep.u, grid),
            }
        )
        if upd < config.picard_tol:
            m = m_new
            break
        m = (1.0 - config.theta) * m + config.theta * m_new
        m[0] = m0
    else:
        raise ConvergenceError(
            f"forward-backward iteration did not converge in {config.max_iters} iterations",
            [row["update_norm"] for row in history],
        )
    sweep = solve_hjb_backward(m, model, coupling, grid, dt, uT, config.upwinding)
    residual = float(np.max(np.abs(solve_fp_forward(sweep, grid, dt, m0) - m)))
    return TimeDependentSolution(
        grid, sweep.u, m, float(T), np.array(uT, dtype=float), m0, coupling.eps, it, residual, history, flags, sweep.max_cfl
    )


def hopf_cole(m, eps: float) -> np.ndarray:
    z = np.asarray(m, dtype=float) + eps
    if np.any(z <= 0):
        raise SingularityError("Hopf-Cole transform needs m + eps > 0")
    return np.log(z)


def hopf_cole_inverse(v, eps: float) -> np.ndarray:
    return np.exp(v) - eps


@dataclass
class TimeContinuation:
    solutions: list
    report: dict


def epsilon_continuation_time(
    model: Hamiltonian,
    coupling: CouplingParams,
    schedule,
    grid: TorusGrid,
    uT,
    m0,
    T: float,
    nt: int,
    config: SolverConfig | None = None,
) -> TimeContinuation:
    schedule = [float(e) for e in schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])) or schedule[-1] <= 0:
        raise ValidationError(f"eps schedule must be positive and strictly decreasing, got {schedule}")
    sols = []
    for eps in schedule:
        prev = sols[-1] if sols else None
        sol = fixed_point_time(
            model, coupling.with_eps(eps), grid, uT, m0, T, nt, config, m_init=None if prev is None else prev.m
        )
        log.info("eps=%g converged in %d iterations", eps, sol.iterations)
        sols.append(sol)
    return TimeContinuation(sols, time_limit_report(sols))


def time_limit_report(sols) -> dict:
    grid = sols[0].grid
    rows = [
        {
            "eps_from": a.eps,
            "eps_to": b.eps,
            "du_sup": float(np.max(np.abs(a.u - b.u))),
            "dm_sup": float(np.max(np.abs(a.m - b.m))),
        }
        for a, b in zip(sols, sols[1:])
    ]
    du = [r["du_sup"] for r in rows]
    lip = [lipschitz_norm(s.u, grid) for s in sols]
    eta = [float(np.min(s.m + s.eps)) for s in sols]
    report = {
        "eps": [s.eps for s in sols],
        "cauchy": rows,
        "cauchy_u_monotone": all(b <= a for a, b in zip(du, du[1:])),
        "min_density": eta,
        "lipschitz": lip,
        "iterations": [s.iterations for s in sols],
    }
    if len(sols) >= 2:
        report["lipschitz_ratio"] = lip[-1] / lip[0]
        report["min_density_ratio"] = eta[-1] / eta[-2]
    return report
