"""A priori estimate quantities and structural identities evaluated on solutions.

Every check returns a plain-dict entry ``{id, values, bound, passed, tol, ...}``
so reports serialize as JSON and can be recomputed from dumped fields. Integrals
over the torus use the grid quadrature; time integrals are left Riemann sums
matching the scheme's step pairing. ``H`` is the scheme's numerical
Hamiltonian unless an entry says otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .coupling import CouplingParams, convex_power, g_eps, inverse_power
from .errors import ValidationError
from .grid import TorusGrid, forward_diff, gradient, hessian, inner, integrate, solve_diffusion
from .scheme import apply_B, discrete_hamiltonian

FACTOR = 2.0
FLOOR = 1e-12


def entry(ident, values, bound=None, passed=True, tol=None, **extra) -> dict:
    out = {"id": ident, "values": values, "bound": bound, "passed": bool(passed), "tol": tol}
    out.update(extra)
    return out


@dataclass
class EstimateReport:
    entries: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, e):
        if isinstance(e, list):
            self.entries.extend(e)
        else:
            self.entries.append(e)
        return e

    @property
    def passed(self) -> bool:
        return all(e["passed"] for e in self.entries)

    def get(self, ident):
        for e in self.entries:
            if e["id"] == ident:
                return e
        raise KeyError(ident)

    def to_dict(self) -> dict:
        return {"meta": self.meta, "passed": self.passed, "entries": self.entries}

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [("id", "passed", "values", "bound", "tol")]
        for e in self.entries:
            rows.append((e["id"], "PASS" if e["passed"] else "FAIL", _short(e["values"]), _short(e["bound"]), _short(e["tol"])))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def _short(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, dict):
        return ", ".join(f"{k}={_short(x)}" for k, x in v.items())
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def discretization_tol(grid: TorusGrid, dt: float, factor: float = 10.0) -> float:
    return factor * (grid.h**2 + dt)


def sobolev_conjugate(d: int) -> float:
    """``2* = 2d/(d-2)``, infinite for ``d <= 2``."""
    return math.inf if d <= 2 else 2.0 * d / (d - 2)


def osc(f) -> float:
    return float(np.max(f) - np.min(f))


# -- schedule surrogate -------------------------------------------------------------


def factor_two(trace, factor: float = FACTOR, floor: float = FLOOR) -> tuple[bool, float]:
    """Bounded-in-eps surrogate on the two smallest eps (the last two entries)."""
    a, b = abs(float(trace[-2])), abs(float(trace[-1]))
    if not (math.isfinite(a) and math.isfinite(b)):
        return False, math.inf
    hi, lo = max(a, b), min(a, b)
    if hi <= floor:
        return True, 1.0
    if lo <= floor:
        return False, math.inf
    return hi <= factor * lo, hi / lo


def schedule_entries(traces: dict, eps) -> list:
    out = []
    for name, trace in traces.items():
        if len(trace) < 2:
            raise ValidationError("schedule rule needs at least two stages")
        ok, ratio = factor_two(trace)
        peak = max(abs(float(t)) for t in trace)
        last = abs(float(trace[-1]))
        out.append(
            entry(
                f"schedule.{name}",
                {"trace": [float(t) for t in trace], "eps": list(eps)},
                bound=FACTOR,
                passed=ok,
                tol=FLOOR,
                ratio_last_two=ratio,
                ratio_max_to_smallest_eps=peak / last if last > 0 else math.inf,
            )
        )
    return out


# -- stationary -----------------------------------------------------------------


def _require_converged(residuals, tol):
    if not all(math.isfinite(r) and r <= tol for r in residuals):
        raise ValidationError(f"solution residuals {residuals} exceed {tol:g}; not a converged solution")


def stationary_first_order(sol, model, coupling: CouplingParams, upwind=True, residual_tol=1e-6, identity_tol=1e-8) -> dict:
    """``Q1 = int (m+eps)^-alpha``, ``Q2 = int H``, ``Q3 = int H m``, ``Q4 = |Hbar|``
    plus the integrated-HJB identity ``Q2 = Hbar + int g_eps(m)``."""
    _require_converged((sol.hjb_res, sol.fp_res), residual_tol)
    grid = sol.grid
    Hh, _, _ = discrete_hamiltonian(model, grid, sol.u, upwind)
    Q1 = integrate(inverse_power(sol.m, coupling, coupling.alpha), grid)
    Q2 = integrate(Hh, grid)
    Q3 = inner(Hh, sol.m, grid)
    Q4 = abs(sol.hbar)
    rhs = sol.hbar + integrate(g_eps(sol.m, coupling), grid)
    gap = abs(Q2 - rhs)
    vals = {"Q1": Q1, "Q2": Q2, "Q3": Q3, "Q4": Q4}
    return entry(
        "stationary.first_order",
        vals,
        bound={"integrated_hjb_rhs": rhs},
        passed=all(math.isfinite(v) for v in vals.values()) and gap <= identity_tol,
        tol=identity_tol,
        identity_gap=gap,
    )


def stationary_second_order(sol, model, coupling: CouplingParams, residual_tol=1e-6) -> dict:
    """``S1 = int |Dm|^2/(m+eps)^(alpha+1)``, ``S2 = int Tr(Dpp H (D^2u)^2) m``."""
    _require_converged((sol.hjb_res, sol.fp_res), residual_tol)
    grid = sol.grid
    Dm = gradient(sol.m, grid)
    S1 = integrate(np.sum(Dm**2, axis=0) * inverse_power(sol.m, coupling, coupling.alpha + 1.0), grid)
    S2 = second_order_trace(sol.u, sol.m, model, grid)
    return entry("stationary.second_order", {"S1": S1, "S2": S2}, passed=math.isfinite(S1) and math.isfinite(S2))


def second_order_trace(u, m, model, grid) -> float:
    Du = gradient(u, grid)
    D2u = hessian(u, grid)
    A = model.Dpp(grid.coords, Du)
    tr = np.einsum("ij...,jk...,ki...->...", A, D2u, D2u)
    return inner(tr, m, grid)


def min_density_monitor(m, eps: float, alpha: float, grid: TorusGrid, p_list=()) -> dict:
    """``eta = min(m + eps)`` and ``int (m+eps)^-p`` (each bounded by ``eta^-p``)."""
    z = np.asarray(m) + eps
    eta = float(np.min(z))
    ps = sorted({float(alpha), *map(float, p_list)})
    if grid.dim >= 3 and alpha != 1:
        ps.append((alpha - 1.0) * grid.dim / (grid.dim - 2))
    ints = {}
    ok = eta > 0
    for p in ps:
        val = integrate(z ** (-p), grid) if eta > 0 else math.inf
        ints[f"{p:g}"] = val
        ok = ok and val <= eta ** (-p) * (1 + 1e-12)
    return entry("min_density", {"eta": eta, "inverse_power_integrals": ints}, passed=ok)


# -- time-dependent -------------------------------------------------------------------


def heat_flow(zeta0, grid, dt, steps) -> np.ndarray:
    out = np.empty((steps + 1, *grid.shape))
    out[0] = zeta0
    for k in range(steps):
        out[k + 1] = solve_diffusion(out[k], grid, dt)
    return out


def heat_comparison(sol, zeta0, model, coupling: CouplingParams, t_index: int = 0, label="zeta0", upwind=True) -> dict:
    """``int u(t) zeta0 <= int_t^T int g_eps(m) zeta + int uT zeta(T)`` with ``zeta``
    the discrete heat flow from ``zeta0`` at time ``t``.

    The quadrature pairs ``g(m^k)`` with ``zeta^{k+1}``, mirroring the HJB step,
    so the recorded slack is exactly ``sum dt <Hh(u^{k+1}), zeta^{k+1}> >= 0``.
    """
    grid, dt, nt = sol.grid, sol.dt, sol.nt
    zeta0 = np.asarray(zeta0, dtype=float)
    if zeta0.shape != grid.shape or np.any(zeta0 < 0) or abs(integrate(zeta0, grid) - 1.0) > 1e-10:
        raise ValidationError("zeta0 must be a nonnegative unit-mass field on the grid")
    if not 0 <= t_index < nt:
        raise ValidationError(f"t_index must lie in [0, {nt})")
    z = heat_flow(zeta0, grid, dt, nt - t_index)
    lhs = inner(sol.u[t_index], zeta0, grid)
    running = sum(dt * inner(g_eps(sol.m[k], coupling), z[k - t_index + 1], grid) for k in range(t_index, nt))
    rhs = running + inner(sol.uT, z[-1], grid)
    mass_err = float(max(abs(integrate(zk, grid) - 1.0) for zk in z))
    tol = discretization_tol(grid, dt)
    return entry(
        f"heat_comparison.{label}",
        {"lhs": lhs, "rhs": rhs, "slack": rhs - lhs},
        bound="lhs <= rhs + tol",
        passed=lhs <= rhs + tol and mass_err <= 1e-12,
        tol=tol,
        zeta_mass_error=mass_err,
        t=t_index * dt,
    )


def time_first_order(sol, model, coupling: CouplingParams, upwind=True) -> dict:
    """Space-time integrals ``T1 = int int H m``, ``T2 = int int (m+eps)^(1-alpha)/(alpha-1)``,
    ``T3 = int int (m+eps)^-alpha``, ``T4 = int int H`` and ``osc(uT)``."""
    grid, dt = sol.grid, sol.dt
    T1 = T3 = T4 = 0.0
    T2 = 0.0 if coupling.alpha != 1 else None
    for k in range(sol.nt):
        Hh, _, _ = discrete_hamiltonian(model, grid, sol.u[k + 1], upwind)
        z = sol.m[k] + coupling.eps
        T1 += dt * inner(Hh, sol.m[k], grid)
        T3 += dt * integrate(inverse_power(sol.m[k], coupling, coupling.alpha), grid)
        T4 += dt * integrate(Hh, grid)
        if T2 is not None:
            T2 += dt * integrate(convex_power(z, coupling.alpha), grid)
    vals = {"T1": T1, "T2": T2, "T3": T3, "T4": T4, "osc_uT": osc(sol.uT), "T": sol.T}
    finite = all(v is None or math.isfinite(v) for v in vals.values())
    extra = {} if T2 is not None else {"note": "T2 not applicable at alpha = 1"}
    return entry("time.first_order", vals, passed=finite, **extra)


def fit_first_order_constant(entries) -> dict:
    """Smallest ``C`` with ``T1 <= C (T + osc(uT))`` over a set of runs; labeled fitted."""
    C = max(e["values"]["T1"] / (e["values"]["T"] + e["values"]["osc_uT"]) for e in entries)
    return {"C_fitted": C, "proxy": [C * (e["values"]["T"] + e["values"]["osc_uT"]) for e in entries]}


def inverse_density_norms(sol, coupling: CouplingParams, gamma: float, p_list=()) -> dict:
    """``sup_t ||1/(m+eps)||_{L^p}`` for ``p`` in ``p_list`` plus ``beta = alpha(2-gamma)/gamma``,
    and the dissipation ``int int |D (m+eps)^(-beta/2)|^2``."""
    grid, dt = sol.grid, sol.dt
    beta = coupling.alpha * (2.0 - gamma) / gamma
    ps = sorted({beta, *map(float, p_list)})
    z = sol.m + coupling.eps
    norms = {}
    for p in ps:
        per_t = [integrate(zk ** (-p), grid) ** (1.0 / p) for zk in z]
        norms[f"{p:g}"] = float(max(per_t))
    diss = sum(dt * integrate(np.sum(forward_diff(z[k] ** (-beta / 2), grid) ** 2, axis=0), grid) for k in range(sol.nt))
    vals = list(norms.values())
    monotone = all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))
    return entry(
        "inverse_density_norms",
        {"norms": norms, "beta": beta, "dissipation": float(diss)},
        passed=monotone and all(math.isfinite(v) for v in vals),
        monotone_in_p=monotone,
    )


def max_principle_check(sol, tol: float = 1e-9) -> dict:
    top = float(np.max(sol.u))
    bound = float(np.max(sol.uT))
    return entry("max_principle", {"max_u": top}, bound=bound, passed=top <= bound + tol, tol=tol)


def duality_terms(sol, model, coupling: CouplingParams, upwind=True):
    """Both sides of ``int u m |_{t=T}^{t=0} = int int (DpH.Du - H + g_eps(m)) m``.

    ``exact`` is the scheme's own counterpart (weights ``(I - dt Lap)^-1 m^k``,
    ``Bu`` for ``DpH.Du``); ``quadrature`` uses the continuum integrand with
    centered ``Du`` against the stored ``m^k``.
    """
    grid, dt = sol.grid, sol.dt
    lhs = inner(sol.u[0], sol.m[0], grid) - inner(sol.u[-1], sol.m[-1], grid)
    exact = quad = 0.0
    x = grid.coords
    for k in range(sol.nt):
        uk1 = sol.u[k + 1]
        g = g_eps(sol.m[k], coupling)
        Hh, cm, cp = discrete_hamiltonian(model, grid, uk1, upwind)
        mu = solve_diffusion(sol.m[k], grid, dt)
        exact += dt * inner(apply_B(cm, cp, uk1, grid) - Hh + g, mu, grid)
        Du = gradient(uk1, grid)
        lag = np.sum(model.DpH(x, Du) * Du, axis=0) - model.H(x, Du)
        quad += dt * inner(lag + g, sol.m[k], grid)
    return lhs, exact, quad


def lipschitz_and_duality(sol, model, coupling: CouplingParams, upwind=True) -> dict:
    grid = sol.grid
    Du = gradient(sol.u, grid)
    lip = float(np.max(np.sqrt(np.sum(Du**2, axis=0))))
    lhs, exact, quad = duality_terms(sol, model, coupling, upwind)
    tol = discretization_tol(grid, sol.dt)
    gap = abs(lhs - exact)
    return entry(
        "lipschitz_and_duality",
        {"lipschitz": lip, "lhs": lhs, "rhs": exact, "gap": gap, "rhs_quadrature": quad, "gap_quadrature": abs(lhs - quad)},
        bound=tol,
        passed=gap <= tol and abs(lhs - quad) <= tol,
        tol=tol,
    )


# -- bundles --------------------------------------------------------------------------


def stationary_report(sol, model, coupling: CouplingParams, p_list=(), upwind=True) -> EstimateReport:
    rep = EstimateReport(meta={"kind": "stationary", "eps": sol.eps, "n": sol.grid.n, "dim": sol.grid.dim})
    rep.add(stationary_first_order(sol, model, coupling, upwind))
    rep.add(stationary_second_order(sol, model, coupling))
    rep.add(min_density_monitor(sol.m, coupling.eps, coupling.alpha, sol.grid, p_list))
    return rep


def time_report(sol, model, coupling: CouplingParams, gamma=None, p_list=(), upwind=True) -> EstimateReport:
    grid = sol.grid
    rep = EstimateReport(meta={"kind": "time", "eps": sol.eps, "n": grid.n, "dim": grid.dim, "nt": sol.nt, "T": sol.T})
    rep.add(max_principle_check(sol))
    rep.add(heat_comparison(sol, np.ones(grid.shape), model, coupling, label="uniform", upwind=upwind))
    m0 = sol.m0 / integrate(sol.m0, grid)
    rep.add(heat_comparison(sol, m0, model, coupling, label="m0", upwind=upwind))
    rep.add(time_first_order(sol, model, coupling, upwind))
    if gamma is not None:
        rep.add(inverse_density_norms(sol, coupling, gamma, p_list))
    rep.add(lipschitz_and_duality(sol, model, coupling, upwind))
    eta = float(np.min(sol.m + coupling.eps))
    rep.add(entry("min_density", {"eta": eta}, passed=eta > 0))
    return rep


def stationary_schedule_traces(reports) -> dict:
    tr = {}
    for rep in reports:
        q = rep.get("stationary.first_order")["values"]
        s = rep.get("stationary.second_order")["values"]
        eta = rep.get("min_density")["values"]["eta"]
        for k, v in {**q, **s, "min_density": eta}.items():
            tr.setdefault(k, []).append(v)
    return tr


def time_schedule_traces(reports) -> dict:
    tr = {}
    for rep in reports:
        t = rep.get("time.first_order")["values"]
        for k in ("T1", "T2", "T3", "T4"):
            if t[k] is not None:
                tr.setdefault(k, []).append(t[k])
        tr.setdefault("min_density", []).append(rep.get("min_density")["values"]["eta"])
        tr.setdefault("lipschitz", []).append(rep.get("lipschitz_and_duality")["values"]["lipschitz"])
        try:
            norms = rep.get("inverse_density_norms")["values"]["norms"]
        except KeyError:
            continue
        for p, v in norms.items():
            tr.setdefault(f"inverse_density_L{p}", []).append(v)
    return tr
