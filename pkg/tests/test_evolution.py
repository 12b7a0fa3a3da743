import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import cos_field, power_model

from singular_mfg.coupling import CouplingParams
from singular_mfg.errors import ConvergenceError, SingularityError, ValidationError
from singular_mfg.evolution import (
    epsilon_continuation_time,
    fixed_point_time,
    heat_path,
    hopf_cole,
    hopf_cole_inverse,
    linearize,
    solve_fp_forward,
    solve_hjb_backward,
)
from singular_mfg.fields import FieldSpec
from singular_mfg.grid import integrate, make_grid
from singular_mfg.hamiltonian import LinearDriftHamiltonian
from singular_mfg.stationary import SolverConfig

ZERO_H = LinearDriftHamiltonian(FieldSpec.from_config(0.0), 1.0, 1)
OFF = CouplingParams(1.0, 1.0, weight=0.0)


def heat_error(n, nt, T):
    grid = make_grid(1, n)
    x = grid.coords[0]
    uT = np.sin(2 * np.pi * x)
    sweep = solve_hjb_backward(np.ones((nt + 1, n)), ZERO_H, OFF, grid, T / nt, uT)
    return float(np.max(np.abs(sweep.u[0] - np.exp(-4 * np.pi**2 * T) * uT))), grid.h, T / nt


def test_constant_hamiltonian_sweep():
    grid = make_grid(1, 16)
    sweep = solve_hjb_backward(np.ones((11, 16)), power_model(1, 2.0), OFF, grid, 0.1, np.full(16, 3.0))
    np.testing.assert_allclose(sweep.u[0], 3.0 - 1.0, atol=1e-13)
    np.testing.assert_allclose(sweep.u[:, 0], 3.0 - (1.0 - np.linspace(0, 1, 11)), atol=1e-13)


@pytest.mark.parametrize("n,nt,T", [(32, 32, 0.1), (64, 64, 0.1), (64, 256, 0.5)])
def test_heat_reduction_within_tolerance(n, nt, T):
    err, h, dt = heat_error(n, nt, T)
    assert err <= 10 * (h**2 + dt)


def test_heat_reduction_time_order_is_one():
    # fine space, dt halved: implicit Euler halves the error
    e1, _, _ = heat_error(256, 16, 0.1)
    e2, _, _ = heat_error(256, 32, 0.1)
    assert e1 / e2 == pytest.approx(2.0, rel=0.1)


def test_max_principle_on_sweep():
    grid = make_grid(1, 32)
    uT = cos_field(grid, 0.3)
    model = power_model(1, 1.2, V=0.5, V_amp=0.5)
    sweep = solve_hjb_backward(np.ones((33, 32)), model, CouplingParams(1.0, 0.1), grid, 1 / 32, uT)
    assert sweep.u.max() <= uT.max() + 1e-12


def test_fp_zero_drift_is_monotone_heat_decay():
    grid = make_grid(1, 32)
    m0 = cos_field(grid, 0.5, 1.0)
    nt = 40
    sweep = linearize(np.zeros((nt + 1, 32)), power_model(1), grid, 0.01)
    m = solve_fp_forward(sweep, grid, 0.01, m0)
    np.testing.assert_allclose(m, heat_path(m0, grid, 0.01, nt), atol=1e-14)
    dist = np.max(np.abs(m - 1.0), axis=1)
    assert np.all(np.diff(dist) < 0)


def test_fp_mass_and_positivity(time_run_1d):
    sol, _, _ = time_run_1d
    mass = np.array([integrate(mk, sol.grid) for mk in sol.m])
    assert np.max(np.abs(mass - 1)) <= 1e-12
    assert sol.m.min() > 0


def test_solution_boundary_data_exact(time_run_1d):
    sol, _, _ = time_run_1d
    assert np.array_equal(sol.u[-1], sol.uT)
    assert np.array_equal(sol.m[0], sol.m0)
    assert sol.nt == 128 and sol.dt == pytest.approx(1 / 128)
    assert sol.times[-1] == 1.0


def test_fixed_point_residual(time_run_1d):
    sol, model, cp = time_run_1d
    sweep = solve_hjb_backward(sol.m, model, cp, sol.grid, sol.dt, sol.uT)
    m = solve_fp_forward(sweep, sol.grid, sol.dt, sol.m0)
    assert np.max(np.abs(m - sol.m)) <= 10 * 1e-8
    assert np.max(np.abs(sweep.u - sol.u)) <= 10 * 1e-8
    assert sol.max_cfl <= 1


def test_decoupled_run_converges_fast():
    grid = make_grid(1, 32)
    m0 = cos_field(grid, 0.5, 1.0)
    sol = fixed_point_time(power_model(1, 1.2), OFF, grid, np.zeros(32), m0, 0.5, 16)
    assert sol.iterations <= 2
    np.testing.assert_allclose(sol.m, heat_path(m0, grid, 0.5 / 16, 16), atol=1e-13)
    np.testing.assert_allclose(sol.u[:, 3], -(0.5 - sol.times), atol=1e-13)


def test_m0_is_normalized():
    grid = make_grid(1, 16)
    sol = fixed_point_time(power_model(1, 1.2), OFF, grid, np.zeros(16), np.full(16, 4.0), 0.25, 4)
    np.testing.assert_allclose(sol.m0, 1.0)


@pytest.mark.parametrize("bad", [{"T": 0.0}, {"nt": 0}, {"m0": np.zeros(16)}, {"uT": np.zeros(8)}])
def test_fixed_point_rejects_bad_data(bad):
    grid = make_grid(1, 16)
    args = {"uT": np.zeros(16), "m0": np.ones(16), "T": 1.0, "nt": 8}
    args.update(bad)
    with pytest.raises(ValidationError):
        fixed_point_time(power_model(1), CouplingParams(1.0, 0.1), grid, **args)


def test_fixed_point_flags():
    grid = make_grid(1, 16)
    sol = fixed_point_time(power_model(1, 1.8), CouplingParams(1.0, 0.1), grid, np.zeros(16), np.ones(16), 0.25, 8)
    assert any("gamma" in f for f in sol.flags)
    assert any("alpha = 1" in f for f in sol.flags)


def test_fixed_point_budget():
    grid = make_grid(1, 32)
    model = power_model(1, 1.2, V=0.5, V_amp=0.5)
    with pytest.raises(ConvergenceError) as info:
        fixed_point_time(model, CouplingParams(1.5, 1e-2), grid, cos_field(grid, 0.1), np.ones(32), 1.0, 32, SolverConfig(max_iters=1))
    assert len(info.value.history) == 1


def test_hopf_cole_examples():
    assert np.all(hopf_cole(np.ones(4), 0.0) == 0)
    assert np.all(hopf_cole(np.zeros(4), 1.0) == 0)
    with pytest.raises(SingularityError):
        hopf_cole(np.zeros(4), 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), eps=st.floats(0.0, 1.0))
def test_hopf_cole_round_trip(seed, eps):
    m = np.random.default_rng(seed).random(64) + 0.1
    np.testing.assert_allclose(hopf_cole_inverse(hopf_cole(m, eps), eps), m, rtol=0, atol=1e-14)


def test_time_continuation_report():
    grid = make_grid(1, 32)
    model = power_model(1, 1.2, V=0.5, V_amp=0.5)
    res = epsilon_continuation_time(
        model, CouplingParams(1.5, 0.1), [1e-1, 1e-2, 1e-3], grid, cos_field(grid, 0.1), cos_field(grid, 0.5, 1.0), 0.5, 16
    )
    rep = res.report
    assert len(rep["cauchy"]) == 2
    assert isinstance(rep["cauchy_u_monotone"], bool)
    assert rep["lipschitz_ratio"] <= 2
    assert min(rep["min_density"]) > 0
    assert 0.5 <= rep["min_density_ratio"] <= 2
