import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singular_mfg.grid import gradient, inner, integrate, make_grid
from singular_mfg.scheme import B_matrix, apply_B, apply_BT, cfl_number, discrete_hamiltonian

from helpers import power_model


def random_state(seed, dim, n):
    g = make_grid(dim, n)
    rng = np.random.default_rng(seed)
    model = power_model(dim, gamma=1.3, a=1.0, a_amp=0.3, V=0.2)
    u = 0.3 * rng.standard_normal(g.shape)
    return g, model, u, rng


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), dim=st.sampled_from([1, 2]), upwind=st.booleans())
def test_B_annihilates_constants_and_BT_conserves_mass(seed, dim, upwind):
    g, model, u, rng = random_state(seed, dim, 16)
    _, cm, cp = discrete_hamiltonian(model, g, u, upwind)
    assert np.max(np.abs(apply_B(cm, cp, np.full(g.shape, 2.0), g))) < 1e-10
    mu = rng.random(g.shape)
    assert abs(integrate(apply_BT(cm, cp, mu, g), g)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), dim=st.sampled_from([1, 2]))
def test_BT_is_the_transpose(seed, dim):
    g, model, u, rng = random_state(seed, dim, 8)
    _, cm, cp = discrete_hamiltonian(model, g, u)
    w, mu = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
    lhs = inner(apply_B(cm, cp, w, g), mu, g)
    assert lhs == pytest.approx(inner(w, apply_BT(cm, cp, mu, g), g), abs=1e-11 * (1 + abs(lhs)))
    B = B_matrix(cm, cp, g)
    np.testing.assert_allclose((B @ w.ravel()).reshape(g.shape), apply_B(cm, cp, w, g), atol=1e-10)


def test_upwind_matrix_sign_structure():
    g, model, u, _ = random_state(7, 2, 16)
    _, cm, cp = discrete_hamiltonian(model, g, u)
    assert np.all(cm >= 0) and np.all(cp <= 0)
    B = B_matrix(cm, cp, g).toarray()
    off = B - np.diag(np.diag(B))
    assert np.all(np.diag(B) >= 0) and np.all(off <= 1e-15)


def test_discrete_hamiltonian_is_consistent():
    errs = []
    for n in (64, 128):
        g = make_grid(1, n)
        model = power_model(1, gamma=1.5, a=1.0, V=0.5)
        u = 0.2 * np.sin(2 * np.pi * g.coords[0])
        Hh, _, _ = discrete_hamiltonian(model, g, u)
        errs.append(np.max(np.abs(Hh - model.H(g.coords, gradient(u, g)))))
    assert errs[0] < 5 / 64
    assert 1.6 < errs[0] / errs[1] < 4.5


def test_discrete_hamiltonian_at_constant():
    g = make_grid(2, 8)
    model = power_model(2, gamma=1.5, a=2.0, V=0.5)
    Hh, cm, cp = discrete_hamiltonian(model, g, np.ones(g.shape))
    np.testing.assert_allclose(Hh, 2.5)
    assert np.all(cm == 0) and np.all(cp == 0)


def test_cfl_number():
    g = make_grid(1, 10)
    cm = np.full((1, 10), 2.0)
    cp = np.full((1, 10), -1.0)
    assert cfl_number(cm, cp, g, 0.01) == pytest.approx(0.3)
