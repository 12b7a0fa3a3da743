"""Discrete Hamiltonian, its linearization ``B`` and the transpose ``B^T``.

For a model's grid Hamiltonian ``Hh(D-u, D+u)`` the linearization is

    (B w)_i = sum_k cminus_k (D-_k w)_i + cplus_k (D+_k w)_i

with ``cminus = dHh/dD-u`` and ``cplus = dHh/dD+u`` frozen at ``u``. ``B 1 = 0``,
so ``B^T`` conserves mass; with upwinding ``B`` has a nonnegative diagonal and
nonpositive off-diagonals.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .grid import TorusGrid, backward_diff, forward_diff, shift_index


def one_sided(u: np.ndarray, grid: TorusGrid):
    return backward_diff(u, grid), forward_diff(u, grid)


def discrete_hamiltonian(model, grid: TorusGrid, u: np.ndarray, upwind: bool = True):
    """``(Hh, cminus, cplus)`` at the grid function ``u``."""
    dm, dp = one_sided(u, grid)
    return model.numerical(grid, dm, dp, upwind)


def apply_B(cm, cp, w, grid: TorusGrid):
    dm, dp = one_sided(w, grid)
    return np.sum(cm * dm + cp * dp, axis=0)


def apply_BT(cm, cp, mu, grid: TorusGrid):
    h = grid.h
    out = np.zeros_like(mu)
    for k in range(grid.dim):
        a, b = cm[k] * mu, cp[k] * mu
        out += (a - b - np.roll(a, -1, axis=k) + np.roll(b, 1, axis=k)) / h
    return out


def B_matrix(cm, cp, grid: TorusGrid) -> sp.csr_matrix:
    h = grid.h
    idx = np.arange(grid.size)
    rows, cols, vals = [idx], [idx], [np.sum(cm - cp, axis=0).ravel() / h]
    for k in range(grid.dim):
        rows += [idx, idx]
        cols += [shift_index(grid, k, -1), shift_index(grid, k, 1)]
        vals += [-cm[k].ravel() / h, cp[k].ravel() / h]
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    ).tocsr()


def cfl_number(cm, cp, grid: TorusGrid, dt: float) -> float:
    """``dt * max_i sum_k (|cminus| + |cplus|) / h``; explicit steps stay monotone below 1."""
    return float(dt * np.max(np.sum(np.abs(cm) + np.abs(cp), axis=0)) / grid.h)
