"""Uniform periodic grids on the unit torus and their finite-difference operators.

Fields are plain numpy arrays of shape ``grid.shape`` (``(n,)`` or ``(n, n)``,
``ij`` indexing); vector fields carry a leading axis of length ``dim``.
Space-time paths carry a leading time axis.

The centered divergence is the exact negative transpose of the centered
gradient under ``<f, g> = h^d sum(f g)``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.sparse as sp

from .errors import ValidationError

_HEADER = struct.Struct("<iiq")  # dim, n, count
_TIME_EXT = struct.Struct("<qd")  # slices, horizon T


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValidationError(f"grid dim must be 1 or 2, got {self.dim}")
        if self.n < 8:
            raise ValidationError(f"grid needs n >= 8 points per axis, got {self.n}")
        if self.n % 2:
            raise ValidationError(f"grid n must be even, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(dim, *shape)``."""
        x = np.arange(self.n) * self.h
        return np.stack(np.meshgrid(*([x] * self.dim), indexing="ij"))

    @cached_property
    def laplacian_symbol(self) -> np.ndarray:
        """Eigenvalues of the discrete Laplacian on the rfft lattice (all <= 0)."""
        k = np.arange(self.n)
        lam1 = (2.0 * np.cos(2 * np.pi * k / self.n) - 2.0) / self.h**2
        if self.dim == 1:
            return lam1[: self.n // 2 + 1]
        return lam1[:, None] + lam1[None, : self.n // 2 + 1]

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)


def make_grid(dim: int, n: int) -> TorusGrid:
    return TorusGrid(int(dim), int(n))


# -- one-sided differences -------------------------------------------------


def forward_diff(f: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """D+ f along each axis, shape ``(dim, *shape)``."""
    ax0 = f.ndim - grid.dim
    return np.stack([(np.roll(f, -1, axis=ax0 + k) - f) / grid.h for k in range(grid.dim)])


def backward_diff(f: np.ndarray, grid: TorusGrid) -> np.ndarray:
    ax0 = f.ndim - grid.dim
    return np.stack([(f - np.roll(f, 1, axis=ax0 + k)) / grid.h for k in range(grid.dim)])


def gradient(
    f: np.ndarray,
    grid: TorusGrid,
    scheme: str = "centered",
    drift: np.ndarray | None = None,
) -> np.ndarray:
    """Periodic gradient.

    ``scheme="upwind"`` picks, per component, the backward difference where the
    transport velocity ``drift`` is positive and the forward one elsewhere.
    """
    if scheme == "centered":
        ax0 = f.ndim - grid.dim
        return np.stack(
            [
                (np.roll(f, -1, axis=ax0 + k) - np.roll(f, 1, axis=ax0 + k)) / (2 * grid.h)
                for k in range(grid.dim)
            ]
        )
    if scheme == "upwind":
        if drift is None:
            raise ValidationError("upwind gradient needs a drift field")
        drift = np.asarray(drift)
        if drift.shape != (grid.dim, *grid.shape):
            raise ValidationError(f"drift shape {drift.shape} does not match grid")
        return np.where(drift > 0, backward_diff(f, grid), forward_diff(f, grid))
    raise ValidationError(f"unknown gradient scheme {scheme!r}")


def divergence(F: np.ndarray, grid: TorusGrid) -> np.ndarray:
    # centered differences are antisymmetric, so this is -grad^T exactly
    return sum(
        (np.roll(F[k], -1, axis=k) - np.roll(F[k], 1, axis=k)) / (2 * grid.h)
        for k in range(grid.dim)
    )


def laplacian(f: np.ndarray, grid: TorusGrid) -> np.ndarray:
    ax0 = f.ndim - grid.dim
    out = -2.0 * grid.dim * f
    for k in range(grid.dim):
        out = out + np.roll(f, 1, axis=ax0 + k) + np.roll(f, -1, axis=ax0 + k)
    return out / grid.h**2


def hessian(f: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Composed centered differences, shape ``(dim, dim, *shape)``."""
    g = gradient(f, grid)
    return np.stack([gradient(g[i], grid) for i in range(grid.dim)])


def integrate(f: np.ndarray, grid: TorusGrid) -> float:
    return float(np.sum(f) * grid.cell_volume)


def inner(f: np.ndarray, g: np.ndarray, grid: TorusGrid) -> float:
    return float(np.sum(f * g) * grid.cell_volume)


def solve_diffusion(rhs: np.ndarray, grid: TorusGrid, dt: float) -> np.ndarray:
    """Solve ``(I - dt*Laplacian) x = rhs`` exactly via FFT diagonalization."""
    axes = tuple(range(rhs.ndim - grid.dim, rhs.ndim))
    r = scipy.fft.rfftn(rhs, axes=axes)
    r /= 1.0 - dt * grid.laplacian_symbol
    return scipy.fft.irfftn(r, s=grid.shape, axes=axes)


# -- sparse assembly ---------------------------------------------------------


def node_index(grid: TorusGrid) -> np.ndarray:
    return np.arange(grid.size).reshape(grid.shape)


def shift_index(grid: TorusGrid, axis: int, step: int) -> np.ndarray:
    """Flat index of the neighbour ``i + step*e_axis`` for every node."""
    return np.roll(node_index(grid), -step, axis=axis).ravel()


def laplacian_matrix(grid: TorusGrid) -> sp.csr_matrix:
    idx = np.arange(grid.size)
    rows = [idx]
    cols = [idx]
    vals = [np.full(grid.size, -2.0 * grid.dim)]
    for k in range(grid.dim):
        for step in (-1, 1):
            rows.append(idx)
            cols.append(shift_index(grid, k, step))
            vals.append(np.ones(grid.size))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    )
    return (mat / grid.h**2).tocsr()


# -- serialization -----------------------------------------------------------


def save_field(path, grid: TorusGrid, values: np.ndarray, horizon: float | None = None) -> None:
    """Write a scalar field or a space-time path as little-endian float64.

    Header: int32 dim, int32 n, int64 count. When ``count`` exceeds ``n**dim``
    the data is a path and an extension follows: int64 slices, float64 T.
    """
    values = np.ascontiguousarray(values, dtype="<f8")
    count = values.size
    if count % grid.size:
        raise ValidationError("field size is not a multiple of the grid size")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(grid.dim, grid.n, count))
        if count != grid.size:
            fh.write(_TIME_EXT.pack(count // grid.size, float(horizon or 0.0)))
        fh.write(values.tobytes(order="C"))


def load_field(path) -> tuple[TorusGrid, np.ndarray, float | None]:
    """Inverse of :func:`save_field`; returns ``(grid, values, horizon)``."""
    raw = Path(path).read_bytes()
    dim, n, count = _HEADER.unpack_from(raw, 0)
    grid = make_grid(dim, n)
    offset = _HEADER.size
    horizon = None
    shape: tuple[int, ...] = grid.shape
    if count != grid.size:
        slices, horizon = _TIME_EXT.unpack_from(raw, offset)
        offset += _TIME_EXT.size
        shape = (slices, *grid.shape)
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
    return grid, values.copy(), horizon


def write_csv(path, grid: TorusGrid, values: np.ndarray) -> None:
    """One node per row: coordinates then value."""
    pts = grid.coords.reshape(grid.dim, -1).T
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k + 1}" for k in range(grid.dim)] + ["value"])
        for p, v in zip(pts, np.ravel(values)):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
