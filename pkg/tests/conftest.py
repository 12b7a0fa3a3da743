import pytest
from helpers import cos_field, power_model

from singular_mfg.coupling import CouplingParams
from singular_mfg.evolution import fixed_point_time
from singular_mfg.grid import make_grid


@pytest.fixture(scope="session")
def time_run_1d():
    """A converged singular 1-D time solve, shared by several modules' tests."""
    grid = make_grid(1, 64)
    model = power_model(1, 1.2, V=0.5, V_amp=0.5)
    cp = CouplingParams(1.5, 1e-2)
    sol = fixed_point_time(model, cp, grid, cos_field(grid, 0.1), cos_field(grid, 0.5, 1.0), 1.0, 128)
    return sol, model, cp
