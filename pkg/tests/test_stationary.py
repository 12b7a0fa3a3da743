import numpy as np
import pytest

from helpers import power_model

from singular_mfg.coupling import CouplingParams
from singular_mfg.errors import ConvergenceError, ValidationError
from singular_mfg.fields import FieldSpec
from singular_mfg.grid import integrate, make_grid
from singular_mfg.hamiltonian import LinearDriftHamiltonian
from singular_mfg.scheme import discrete_hamiltonian
from singular_mfg.stationary import (
    SolverConfig,
    epsilon_continuation_stationary,
    fp_operator,
    hjb_residual,
    solve_fp_stationary,
    solve_hjb_ergodic,
    solve_stationary_eps,
)


@pytest.fixture(scope="module")
def singular_1d():
    grid = make_grid(1, 64)
    model = power_model(1, 1.2, a=1.0, a_amp=0.2, V=0.5, V_amp=0.5)
    cp = CouplingParams(1.5, 1e-2)
    return grid, model, cp, solve_stationary_eps(model, cp, grid)


def test_solver_config_validates():
    for kw in ({"theta": 0.0}, {"theta": 1.5}, {"picard_tol": 0.0}, {"max_iters": 0}):
        with pytest.raises(ValidationError):
            SolverConfig(**kw)


def test_ergodic_constant_coupling():
    grid = make_grid(1, 32)
    model = power_model(1, 2.0)
    # m = 1, eps = 1, alpha = 1 gives g_eps = -1/2
    u, hbar = solve_hjb_ergodic(np.ones(grid.shape), model, CouplingParams(1.0, 1.0), grid)
    assert np.max(np.abs(u)) < 1e-14
    assert hbar == pytest.approx(1.5, abs=1e-14)


def test_ergodic_constant_is_mean_of_H_minus_g():
    grid = make_grid(2, 16)
    model = power_model(2, 1.5, a=2.0, V=0.25)
    m = np.full(grid.shape, 3.0)
    cp = CouplingParams(0.5, 1.0)
    _, hbar = solve_hjb_ergodic(m, model, cp, grid)
    assert hbar == pytest.approx(2.25 + 0.5, abs=1e-13)


def test_manufactured_ergodic_solution():
    for n in (32, 64, 128):
        grid = make_grid(1, n)
        x = grid.coords
        model = power_model(1, 1.5, a=1.0, V=0.0)
        ustar = 0.01 * np.sin(2 * np.pi * x[0])
        du = np.array([0.02 * np.pi * np.cos(2 * np.pi * x[0])])
        f = 0.04 * np.pi**2 * np.sin(2 * np.pi * x[0]) + model.H(x, du)
        K = float(f.max()) + 1.0
        # alpha = 1 and a vanishing eps turn g_eps(m) = -1/m into f - K
        m = 1.0 / (K - f)
        cfg = SolverConfig(upwinding=False, linear_tol=1e-12)
        u, hbar = solve_hjb_ergodic(m, model, CouplingParams(1.0, 1e-300), grid, cfg)
        assert np.max(np.abs(u - ustar)) <= 10 * grid.h**2
        # hbar + g = hbar + f - K, so hbar recovers K when the mean of the equation is f
        assert abs(hbar - K) <= 10 * grid.h**2


def test_integrated_identity(singular_1d):
    grid, model, cp, sol = singular_1d
    res = hjb_residual(sol.u, sol.hbar, sol.m, model, cp, grid)
    assert np.max(np.abs(res)) <= 1e-9
    Hh, _, _ = discrete_hamiltonian(model, grid, sol.u)
    assert abs(integrate(Hh, grid) - (sol.hbar - integrate((sol.m + cp.eps) ** -cp.alpha, grid))) <= 1e-8


def test_fp_uniform_for_zero_gradient():
    grid = make_grid(2, 16)
    m = solve_fp_stationary(np.zeros(grid.shape), power_model(2), grid)
    np.testing.assert_allclose(m, 1.0, atol=1e-12)


def test_fp_gibbs_density():
    W = FieldSpec.from_config({"fourier": [[1, 0.1, 0.0]]})
    model = LinearDriftHamiltonian(W, sign=1.0, dim=1)
    for n in (32, 64, 128):
        grid = make_grid(1, n)
        m = solve_fp_stationary(np.zeros(grid.shape), model, grid, SolverConfig(upwinding=False))
        gibbs = np.exp(-W(grid.coords))
        gibbs /= integrate(gibbs, grid)
        assert np.max(np.abs(m / gibbs - 1)) <= 10 * grid.h**2


def test_fp_kernel_conservation(singular_1d):
    grid, model, _, sol = singular_1d
    LT = fp_operator(sol.u, model, grid)
    assert abs(integrate((LT @ sol.m.ravel()).reshape(grid.shape), grid)) <= 1e-12
    assert abs(integrate(sol.m, grid) - 1) <= 1e-12


def test_decoupled_solution_in_one_iteration():
    grid = make_grid(1, 32)
    sol = solve_stationary_eps(power_model(1, 2.0), CouplingParams(1.0, 1.0, weight=0.0), grid)
    assert sol.iterations == 1
    assert np.max(np.abs(sol.u)) < 1e-14
    np.testing.assert_allclose(sol.m, 1.0, atol=1e-12)
    assert sol.hbar == pytest.approx(1.0, abs=1e-14)


def test_converged_solution_invariants(singular_1d):
    grid, model, cp, sol = singular_1d
    assert abs(integrate(sol.m, grid) - 1) <= 1e-10
    assert sol.m.min() >= -1e-12
    assert abs(integrate(sol.u, grid)) <= 1e-10
    assert sol.hjb_res <= 10 * 1e-8 and sol.fp_res <= 10 * 1e-8
    assert not sol.flags


def test_symmetric_data_gives_even_solution(singular_1d):
    grid, _, _, sol = singular_1d
    # cos data are even about x = 1/2; reflection maps node i to n - i
    reflect = lambda f: np.roll(f[::-1], 1)  # noqa: E731
    assert np.max(np.abs(sol.m - reflect(sol.m))) <= 1e-8
    assert np.max(np.abs(sol.u - reflect(sol.u))) <= 1e-8


def test_fixed_point_consistency(singular_1d):
    grid, model, cp, sol = singular_1d
    u, hbar = solve_hjb_ergodic(sol.m, model, cp, grid, u0=sol.u)
    m = solve_fp_stationary(u, model, grid)
    assert np.max(np.abs(u - sol.u)) <= 1e-7
    assert np.max(np.abs(m - sol.m)) <= 1e-7
    assert abs(hbar - sol.hbar) <= 1e-7


def test_picard_iterates_keep_mass_and_sign(singular_1d):
    _, _, _, sol = singular_1d
    assert all(row["min_m"] >= -1e-12 for row in sol.history)


def test_determinism(singular_1d):
    grid, model, cp, sol = singular_1d
    again = solve_stationary_eps(model, cp, grid)
    assert again.iterations == sol.iterations
    assert np.array_equal(again.u, sol.u) and np.array_equal(again.m, sol.m)


def test_budget_error_carries_history():
    grid = make_grid(1, 32)
    model = power_model(1, 1.2, a=1.0, V=0.5, V_amp=0.5)
    with pytest.raises(ConvergenceError) as info:
        solve_stationary_eps(model, CouplingParams(1.5, 1e-2), grid, SolverConfig(max_iters=2))
    assert len(info.value.history) == 2


def test_outside_theory_flag():
    grid = make_grid(2, 8)
    sol = solve_stationary_eps(power_model(2, 2.5), CouplingParams(0.5, 0.5, weight=0.0), grid)
    assert any("outside theory" in f for f in sol.flags)


def test_continuation_bookkeeping():
    grid = make_grid(1, 32)
    model = power_model(1, 1.2, a=1.0, V=0.5, V_amp=0.5)
    res = epsilon_continuation_stationary(model, CouplingParams(1.5, 1e-1), [1e-1, 1e-2], grid)
    assert len(res.solutions) == 2 and len(res.report["cauchy"]) == 1
    assert res.report["warm_start_no_worse"]
    assert res.report["min_density_stable"]


def test_continuation_rejects_bad_schedule():
    with pytest.raises(ValidationError):
        epsilon_continuation_stationary(power_model(1), CouplingParams(1.0, 0.1), [1e-2, 1e-1], make_grid(1, 16))


def test_stationary_needs_positive_eps():
    with pytest.raises(ValidationError):
        solve_stationary_eps(power_model(1), CouplingParams(1.0, 0.0), make_grid(1, 16))

