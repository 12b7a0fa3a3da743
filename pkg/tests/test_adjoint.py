import numpy as np
import pytest

from helpers import cos_field, power_model

from singular_mfg.adjoint import (
    AdjointField,
    adjoint_norm_report,
    periodic_bump,
    representation_check,
    solve_adjoint,
    time_index,
    variance_on_torus,
)
from singular_mfg.coupling import CouplingParams
from singular_mfg.errors import ValidationError
from singular_mfg.evolution import fixed_point_time
from singular_mfg.grid import integrate, make_grid


def test_bump_has_unit_mass_and_peak_at_center():
    g = make_grid(2, 32)
    b = periodic_bump(g, (0.25, 0.5), 4 * g.h)
    assert integrate(b, g) == pytest.approx(1.0, abs=1e-14)
    assert np.unravel_index(np.argmax(b), g.shape) == (8, 16)


def test_time_index():
    assert time_index(0.25, 1 / 128, 128) == 32
    for tau in (0.3 / 128, 1.0, -0.1):
        with pytest.raises(ValidationError):
            time_index(tau, 1 / 128, 128)


def test_zero_drift_variance_growth():
    g = make_grid(1, 128)
    nt, T = 64, 0.02
    adj = solve_adjoint(np.zeros((nt + 1, 128)), power_model(1), g, [0.5], 0.0, 4 * g.h, T)
    v0 = variance_on_torus(adj.rho[0], g, 0.5)
    for j in (16, 32, 64):
        growth = variance_on_torus(adj.rho[j], g, 0.5) - v0
        assert growth == pytest.approx(2 * j * T / nt, rel=0.05)


def test_adjoint_mass_and_positivity(time_run_1d):
    sol, model, _ = time_run_1d
    adj = solve_adjoint(sol.u, model, sol.grid, [0.3], 0.25, 4 * sol.grid.h, sol.T)
    assert adj.k0 == 32 and adj.steps == 96
    mass = np.array([integrate(r, sol.grid) for r in adj.rho])
    assert np.max(np.abs(mass - 1)) <= 1e-12
    assert adj.rho.min() >= 0


def test_under_resolved_bump():
    g = make_grid(1, 32)
    with pytest.raises(ValidationError):
        solve_adjoint(np.zeros((9, 32)), power_model(1), g, [0.5], 0.0, g.h, 1.0)


def test_representation_decoupled_constant_run():
    g = make_grid(1, 32)
    model = power_model(1, 1.2, a=1.5, V=0.5)
    cp = CouplingParams(1.5, 0.5)
    T, tau = 1.0, 0.25
    sol = fixed_point_time(model, cp, g, np.full(32, 0.7), np.ones(32), T, 32)
    adj = solve_adjoint(sol.u, model, g, [0.4], tau, 4 * g.h, T)
    e = representation_check(sol, adj, model, cp)
    expected = 0.7 - (T - tau) * (2.0 + 1.5**-1.5)
    assert e["values"]["lhs"] == pytest.approx(expected, abs=1e-12)
    assert e["values"]["gap"] <= 1e-8 and e["values"]["gap_exact"] <= 1e-8
    assert e["passed"]


def test_representation_singular_run(time_run_1d):
    sol, model, cp = time_run_1d
    adj = solve_adjoint(sol.u, model, sol.grid, [0.3], 0.25, 4 * sol.grid.h, sol.T)
    e = representation_check(sol, adj, model, cp)
    assert e["passed"]
    assert e["values"]["gap_exact"] <= 1e-10
    assert e["values"]["lhs"] >= e["values"]["lower_bound"]
    assert e["pq"] == [2.0, 2.0]


def test_representation_rejects_mismatched_grid(time_run_1d):
    sol, model, cp = time_run_1d
    other = AdjointField(np.ones((2, 32)), (0.5,), 0.0, 0.1, 0, sol.dt, make_grid(1, 32))
    with pytest.raises(ValidationError):
        representation_check(sol, other, model, cp)


def test_representation_rejects_non_conjugate_pair(time_run_1d):
    sol, model, cp = time_run_1d
    adj = solve_adjoint(sol.u, model, sol.grid, [0.3], 0.5, 4 * sol.grid.h, sol.T)
    with pytest.raises(ValidationError):
        representation_check(sol, adj, model, cp, pq=(2.0, 3.0))


def test_norm_report_uniform_density():
    g = make_grid(1, 16)
    adj = AdjointField(np.ones((5, 16)), (0.5,), 0.0, 0.25, 0, 0.25, g)
    e = adjoint_norm_report(adj, nu_list=(0.3, 0.7), q_list=(2.0,))
    assert e["values"]["max_int_rho_nu"] == {"0.3": 1.0, "0.7": 1.0}
    assert e["values"]["dissipation"]["0.3"] == 0.0
    assert e["values"]["L1Lq"]["2"] == pytest.approx(1.0)


def test_norm_report_on_singular_run(time_run_1d):
    sol, model, cp = time_run_1d
    adj = solve_adjoint(sol.u, model, sol.grid, [0.3], 0.25, 4 * sol.grid.h, sol.T)
    e = adjoint_norm_report(adj, (0.25, 0.5, 0.9), (1.5, 2.0), sol, model, cp, C_fit=10.0)
    assert e["passed"]
    assert all(v <= 1 + 1e-12 for v in e["values"]["max_int_rho_nu"].values())
    assert e["values"]["int_H_rho"] > 0 and e["cor2_ratio"] > 0


@pytest.mark.parametrize("kw", [{"nu_list": (1.0,)}, {"q_list": (1.0,)}])
def test_norm_report_rejects(kw):
    adj = AdjointField(np.ones((2, 16)), (0.5,), 0.0, 0.25, 0, 0.25, make_grid(1, 16))
    with pytest.raises(ValidationError):
        adjoint_norm_report(adj, **kw)


def test_representation_gap_shrinks_under_refinement():
    gaps = []
    for n in (32, 64):
        g = make_grid(1, n)
        model = power_model(1, 1.2, V=0.5, V_amp=0.5)
        cp = CouplingParams(1.5, 1e-2)
        sol = fixed_point_time(model, cp, g, cos_field(g, 0.2), cos_field(g, 0.5, 1.0), 0.5, n)
        adj = solve_adjoint(sol.u, model, g, [0.25], 0.25, 4 * g.h, 0.5)
        gaps.append(representation_check(sol, adj, model, cp)["values"]["gap"])
    assert gaps[1] < gaps[0]
