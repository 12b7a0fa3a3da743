"""Monte-Carlo validation of the control interpretation.

Agents follow ``dx = v ds + sqrt(2) dW`` with the feedback ``v = -DpH(x, Du)``;
``Du`` is the centered grid gradient interpolated (bi)linearly in space and
frozen over each time step at the slice ``k+1`` the HJB step used. Particles are
processed in fixed chunks, each with its own generator spawned from the master
seed, so results do not depend on how many workers run the chunks.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .coupling import CouplingParams, g_eps
from .errors import ValidationError
from .grid import TorusGrid, gradient, integrate
from .hamiltonian import legendre

log = logging.getLogger(__name__)

CHUNK = 10_000


def interp_periodic(values: np.ndarray, grid: TorusGrid, X: np.ndarray) -> np.ndarray:
    """(Bi)linear periodic interpolation of ``values`` (leading axes allowed) at ``X`` ``(d, N)``."""
    n = grid.n
    s = X / grid.h
    i0 = np.floor(s).astype(np.int64)
    w = s - i0
    i0 %= n
    i1 = (i0 + 1) % n
    lead = values.shape[: values.ndim - grid.dim]
    flat = values.reshape(lead + (-1,))
    if grid.dim == 1:
        return flat[..., i0[0]] * (1 - w[0]) + flat[..., i1[0]] * w[0]
    a, b = (i0[0], i1[0]), (i0[1], i1[1])
    out = 0.0
    for ia, wa in ((a[0], 1 - w[0]), (a[1], w[0])):
        for ib, wb in ((b[0], 1 - w[1]), (b[1], w[1])):
            out = out + flat[..., ia * n + ib] * (wa * wb)
    return out


def sample_density(m: np.ndarray, grid: TorusGrid, N: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``N`` points from the (bi)linear interpolant of ``m``: inverse CDF in
    d = 1, rejection in d = 2. Returns ``(d, N)``."""
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise ValidationError("density must be nonnegative to sample from it")
    if grid.dim == 1:
        h = grid.h
        lo, hi = m, np.roll(m, -1)
        cell = 0.5 * h * (lo + hi)
        cdf = np.concatenate([[0.0], np.cumsum(cell)])
        r = rng.random(N) * cdf[-1]
        i = np.clip(np.searchsorted(cdf, r, side="right") - 1, 0, grid.n - 1)
        rr = r - cdf[i]
        slope = (hi[i] - lo[i]) / h
        t = 2.0 * rr / (lo[i] + np.sqrt(np.maximum(lo[i] ** 2 + 2.0 * slope * rr, 0.0)))
        t = np.where(np.isfinite(t), t, 0.0)
        return ((i * h + np.clip(t, 0.0, h)) % 1.0)[None, :]
    top = float(np.max(m))
    out = np.empty((grid.dim, 0))
    while out.shape[1] < N:
        need = N - out.shape[1]
        Y = rng.random((grid.dim, 2 * need + 16))
        keep = rng.random(Y.shape[1]) * top < interp_periodic(m, grid, Y)
        out = np.concatenate([out, Y[:, keep]], axis=1)
    return out[:, :N]


def piecewise_linear_cdf(m: np.ndarray, grid: TorusGrid, x: np.ndarray) -> np.ndarray:
    """CDF on ``[0, 1)`` of the piecewise-linear interpolant of ``m`` (d = 1)."""
    h = grid.h
    lo, hi = m, np.roll(m, -1)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * h * (lo + hi))])
    i = np.clip((x // h).astype(np.int64), 0, grid.n - 1)
    t = x - i * h
    val = cdf[i] + lo[i] * t + 0.5 * (hi[i] - lo[i]) / h * t**2
    return val / cdf[-1]


@dataclass
class ParticleEnsemble:
    positions: np.ndarray  # (n_records, d, N)
    times: np.ndarray
    N: int
    seed: int
    dt_sim: float
    clip_events: int = 0
    cost: np.ndarray | None = None  # per-particle realized cost
    meta: dict = field(default_factory=dict)


@dataclass
class _Drive:
    """What a chunk needs: per-step gradient slices, coupling slices, and terminal data."""

    grid: TorusGrid
    grads: list
    ms: list | None
    uT: np.ndarray | None
    dt: float
    substeps: int
    v_cap: float


def _feedback(model, X, p, v_cap):
    v = -model.DpH(X, p)
    speed = np.sqrt(np.sum(v**2, axis=0))
    clip = speed > v_cap
    if clip.any():
        v[:, clip] *= v_cap / speed[clip]
    return v, clip


def _run_chunk(model, coupling, drive: _Drive, X, rng, record_steps):
    grid = drive.grid
    h = drive.dt / drive.substeps
    cost = np.zeros(X.shape[1]) if drive.ms is not None else None
    recs = {0: X.copy()} if 0 in record_steps else {}
    clips = 0
    for k, Dg in enumerate(drive.grads):
        for _ in range(drive.substeps):
            p = interp_periodic(Dg, grid, X)
            v, clip = _feedback(model, X, p, drive.v_cap)
            clips += int(clip.sum())
            if cost is not None:
                lag = np.sum(model.DpH(X, p) * p, axis=0) - model.H(X, p)
                if clip.any():
                    lag[clip], _ = legendre(model, X[:, clip], v[:, clip])
                run = g_eps(np.maximum(interp_periodic(drive.ms[k], grid, X), 0.0), coupling)
                cost += h * (lag + run)
            X = (X + v * h + math.sqrt(2.0 * h) * rng.standard_normal(X.shape)) % 1.0
        if k + 1 in record_steps:
            recs[k + 1] = X.copy()
    if cost is not None and drive.uT is not None:
        cost += interp_periodic(drive.uT, grid, X)
    return recs, cost, clips


def _chunks(N):
    sizes = [CHUNK] * (N // CHUNK)
    if N % CHUNK:
        sizes.append(N % CHUNK)
    return sizes


def _simulate(model, coupling, drive: _Drive, N, seed, start, record_steps, jobs):
    sizes = _chunks(N)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def work(c):
        rng = np.random.default_rng(seeds[c])
        if isinstance(start, np.ndarray) and start.ndim == drive.grid.dim and start.shape == drive.grid.shape:
            X = sample_density(start, drive.grid, sizes[c], rng)
        else:
            X = np.repeat(np.asarray(start, dtype=float).reshape(-1, 1), sizes[c], axis=1)
        return _run_chunk(model, coupling, drive, X, rng, record_steps)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(c) for c in range(len(sizes))]
    steps = sorted(record_steps)
    pos = np.stack([np.concatenate([p[0][s] for p in parts], axis=1) for s in steps]) if steps else np.empty((0,))
    cost = np.concatenate([p[1] for p in parts]) if parts[0][1] is not None else None
    clips = sum(p[2] for p in parts)
    if clips:
        log.warning("feedback speed clipped at %g in %d particle-steps", drive.v_cap, clips)
    return pos, cost, clips


def _validate(N):
    if N < 1000:
        raise ValidationError(f"need at least 1000 particles, got {N}")


def simulate(sol, model, N: int, seed: int, record=None, x0=None, substeps: int = 1, v_cap: float = 100.0, jobs: int = 1, coupling=None, k_start: int = 0) -> ParticleEnsemble:
    """Euler-Maruyama under the optimal feedback of a time-dependent solution.

    Starts at ``x0`` if given, else samples ``m0``. ``record`` lists time indices
    whose positions are kept (default start, middle and end). With ``coupling``
    the realized cost along each path is returned too.
    """
    _validate(N)
    grid, dt = sol.grid, sol.dt
    if not 0 <= k_start < sol.nt:
        raise ValidationError("start index outside [0, nt)")
    record = sorted({k_start, (k_start + sol.nt) // 2, sol.nt} if record is None else set(record))
    grads = [gradient(sol.u[k + 1], grid) for k in range(k_start, sol.nt)]
    ms = [sol.m[k] for k in range(k_start, sol.nt)] if coupling is not None else None
    drive = _Drive(grid, grads, ms, sol.uT if coupling is not None else None, dt, substeps, v_cap)
    start = sol.m[k_start] if x0 is None else np.asarray(x0, dtype=float)
    pos, cost, clips = _simulate(model, coupling, drive, N, seed, start, {r - k_start for r in record}, jobs)
    return ParticleEnsemble(pos, np.array(record) * dt, N, seed, dt / substeps, clips, cost)


def kde_kernel(grid: TorusGrid, bandwidth: float) -> np.ndarray:
    """Periodized Gaussian sampled at the nodes, normalized to unit sum."""
    ker = np.ones(grid.shape)
    for k in range(grid.dim):
        d = (grid.coords[k] + 0.5) % 1.0 - 0.5
        ker = ker * sum(np.exp(-0.5 * ((d + j) / bandwidth) ** 2) for j in (-1, 0, 1))
    return ker / ker.sum()


def empirical_density(positions: np.ndarray, grid: TorusGrid, bandwidth: float) -> np.ndarray:
    """Periodic Gaussian KDE of ``positions`` ``(d, N)``: linear binning, then FFT
    convolution. Unit mass by construction."""
    if bandwidth < grid.h * (1 - 1e-12):
        raise ValidationError(f"bandwidth {bandwidth:g} must be at least h = {grid.h:g}")
    X = np.asarray(positions, dtype=float).reshape(grid.dim, -1) % 1.0
    s = X / grid.h
    i0 = np.floor(s).astype(np.int64)
    w = s - i0
    hist = np.zeros(grid.shape)
    corners = [(0, 1 - w[a], 1, w[a]) for a in range(grid.dim)]
    for bits in np.ndindex(*([2] * grid.dim)):
        idx = tuple((i0[a] + bits[a]) % grid.n for a in range(grid.dim))
        wt = np.prod([corners[a][1] if bits[a] == 0 else corners[a][3] for a in range(grid.dim)], axis=0)
        np.add.at(hist, idx, wt)
    ker = kde_kernel(grid, bandwidth)
    smooth = scipy.fft.irfftn(scipy.fft.rfftn(hist) * scipy.fft.rfftn(ker), s=grid.shape)
    smooth = np.maximum(smooth, 0.0)
    return smooth / integrate(smooth, grid)


def l1_distance(a, b, grid) -> float:
    return integrate(np.abs(a - b), grid)


@dataclass
class CostEstimate:
    mean: float
    se: float
    N: int
    clip_events: int
    x0: tuple
    t: float


def empirical_cost(sol, model, coupling: CouplingParams, x0, t: float, N: int, seed: int, substeps: int = 1, v_cap: float = 100.0, jobs: int = 1) -> CostEstimate:
    """Monte-Carlo mean of ``int_t^T [L(x, v) + g_eps(m)] ds + uT(x(T))`` from ``x0``."""
    k = int(round(t / sol.dt))
    if abs(k * sol.dt - t) > 1e-9 or not 0 <= k < sol.nt:
        raise ValidationError(f"t={t} is not a time node in [0, T)")
    ens = simulate(sol, model, N, seed, record=[], x0=x0, substeps=substeps, v_cap=v_cap, jobs=jobs, coupling=coupling, k_start=k)
    c = ens.cost
    return CostEstimate(float(c.mean()), float(c.std(ddof=1) / math.sqrt(len(c))), N, ens.clip_events, tuple(np.ravel(x0).tolist()), t)


def ergodic_cost(stat_sol, model, coupling: CouplingParams, N: int, seed: int, T_sim: float = 50.0, burn_in: float = 10.0, dt_sim: float = 0.01, v_cap: float = 100.0, jobs: int = 1) -> CostEstimate:
    """Long-time average of the running cost under the stationary feedback.

    Along optimal paths ``du = -(L + g_eps(m) + Hbar) ds + martingale``, so the
    average approaches ``-Hbar``. Particles start from the stationary density.
    """
    _validate(N)
    grid = stat_sol.grid
    steps = int(round(T_sim / dt_sim))
    burn = int(round(burn_in / dt_sim))
    Dg = gradient(stat_sol.u, grid)
    sizes = _chunks(N)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def work(c):
        rng = np.random.default_rng(seeds[c])
        X = sample_density(stat_sol.m, grid, sizes[c], rng)
        acc = np.zeros(sizes[c])
        clips = 0
        for j in range(steps):
            p = interp_periodic(Dg, grid, X)
            v, clip = _feedback(model, X, p, v_cap)
            clips += int(clip.sum())
            if j >= burn:
                lag = np.sum(model.DpH(X, p) * p, axis=0) - model.H(X, p)
                if clip.any():
                    lag[clip], _ = legendre(model, X[:, clip], v[:, clip])
                acc += lag + g_eps(np.maximum(interp_periodic(stat_sol.m, grid, X), 0.0), coupling)
            X = (X + v * dt_sim + math.sqrt(2.0 * dt_sim) * rng.standard_normal(X.shape)) % 1.0
        return acc / (steps - burn), clips

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(c) for c in range(len(sizes))]
    avg = np.concatenate([p[0] for p in parts])
    return CostEstimate(float(avg.mean()), float(avg.std(ddof=1) / math.sqrt(N)), N, sum(p[1] for p in parts), (), burn_in)
