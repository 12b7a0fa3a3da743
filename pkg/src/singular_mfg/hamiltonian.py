"""Hamiltonians, the Legendre transform, and sampled checks of the growth assumptions.

Points are arrays of shape ``(d, ...)`` for both ``x`` and ``p``. Every model
exposes closed-form ``H``, ``DpH``, ``DxH``, ``Dpp`` and ``Dxp`` plus a
``numerical`` method giving the grid Hamiltonian built from one-sided
differences together with its derivatives with respect to them.

New Hamiltonians plug in by subclassing :class:`RadialHamiltonian` (when
``H(x, p) = F(x, |p|^2)`` with ``F`` increasing in ``|p|^2``) and providing the
profile ``F`` and its derivatives; only the built-in family and two test
variants ship.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import ConvergenceError, ValidationError
from .fields import FieldSpec
from .grid import TorusGrid

log = logging.getLogger(__name__)


def _dot(a, b):
    return np.sum(a * b, axis=0)


def _sample_min(spec: FieldSpec, dim: int, n: int = 256) -> float:
    if spec.is_constant():
        return float(spec(np.zeros((dim, 1)))[0])
    lo, _ = spec.bounds()
    if lo > 0:
        return lo
    x = np.arange(n) / n
    pts = np.stack(np.meshgrid(*([x] * dim), indexing="ij")).reshape(dim, -1)
    return float(spec(pts).min())


def _spow(s, e):
    """``s**e`` for ``s >= 0`` with the limit value at ``s = 0``."""
    s = np.asarray(s, dtype=float)
    at0 = np.inf if e < 0 else (1.0 if e == 0 else 0.0)
    with np.errstate(divide="ignore"):
        return np.where(s > 0, np.where(s > 0, s, 1.0) ** e, at0)


class Hamiltonian:
    gamma: float | None = None
    dim: int = 1

    def H(self, x, p):
        raise NotImplementedError

    def DpH(self, x, p):
        raise NotImplementedError

    def DxH(self, x, p):
        raise NotImplementedError

    def Dpp(self, x, p):
        raise NotImplementedError

    def Dxp(self, x, p):
        """Mixed second derivative, entry ``[i, j] = d^2 H / dx_i dp_j``."""
        raise NotImplementedError

    def numerical(self, grid: TorusGrid, dminus, dplus, upwind: bool = True):
        """Grid Hamiltonian from one-sided differences.

        Returns ``(Hh, cminus, cplus)`` with ``cminus = dHh/dD-u`` and
        ``cplus = dHh/dD+u`` per axis. With upwinding ``cminus >= 0 >= cplus``,
        which makes the linearized generator an M-matrix.
        """
        raise NotImplementedError

    def legendre_fast(self, x, v):
        """Closed-form Lagrangian, or ``None`` when unavailable."""
        return None

    def to_config(self) -> dict:
        raise NotImplementedError


class RadialHamiltonian(Hamiltonian):
    """``H(x, p) = F(x, s)`` with ``s = |p|^2``."""

    def F(self, x, s):
        raise NotImplementedError

    def F_s(self, x, s):
        raise NotImplementedError

    def F_ss(self, x, s):
        raise NotImplementedError

    def F_x(self, x, s):
        raise NotImplementedError

    def F_xs(self, x, s):
        raise NotImplementedError

    def H(self, x, p):
        return self.F(x, _dot(p, p))

    def DpH(self, x, p):
        return 2.0 * self.F_s(x, _dot(p, p)) * p

    def DxH(self, x, p):
        return self.F_x(x, _dot(p, p))

    def Dpp(self, x, p):
        p = np.asarray(p, dtype=float)
        d = p.shape[0]
        s = _dot(p, p)
        eye = np.eye(d).reshape((d, d) + (1,) * (p.ndim - 1))
        with np.errstate(invalid="ignore"):
            return 2.0 * self.F_s(x, s) * eye + 4.0 * self.F_ss(x, s) * p[:, None] * p[None, :]

    def Dxp(self, x, p):
        s = _dot(p, p)
        return 2.0 * self.F_xs(x, s)[:, None] * np.asarray(p)[None, :]

    def _grid_cache(self, grid: TorusGrid) -> np.ndarray:
        return grid.coords

    def numerical(self, grid, dminus, dplus, upwind=True):
        x = self._grid_cache(grid)
        if upwind:
            lo = np.maximum(dminus, 0.0)
            hi = np.minimum(dplus, 0.0)
            s = _dot(lo, lo) + _dot(hi, hi)
            fs = 2.0 * self.F_s(x, s)
            return self.F(x, s), fs * lo, fs * hi
        p = 0.5 * (dminus + dplus)
        s = _dot(p, p)
        half = self.F_s(x, s) * p
        return self.F(x, s), half, half


class PowerHamiltonian(RadialHamiltonian):
    """``H(x, p) = a(x) (1 + |p|^2)^(gamma/2) + V(x)``."""

    def __init__(self, a: FieldSpec, V: FieldSpec, gamma: float, dim: int = 1):
        if not gamma > 1:
            raise ValidationError(f"gamma must exceed 1, got {gamma}")
        if dim not in (1, 2):
            raise ValidationError(f"dim must be 1 or 2, got {dim}")
        a_min = _sample_min(a, dim)
        if not a_min > 0:
            raise ValidationError(f"a(x) must be positive, sampled min {a_min:.3g}")
        v_min = _sample_min(V, dim)
        if v_min < 0:
            log.warning("V has min %.6g < 0; shifting V up so that H >= 0", v_min)
            V = V.shifted(-v_min)
        self.a = a
        self.V = V
        self.gamma = float(gamma)
        self.dim = dim
        self._coords: dict = {}

    @classmethod
    def from_config(cls, spec: dict, dim: int) -> "PowerHamiltonian":
        unknown = set(spec) - {"a", "V", "gamma"}
        if unknown:
            raise ValidationError(f"unknown model keys {sorted(unknown)}")
        return cls(
            FieldSpec.from_config(spec.get("a", {"const": 1.0})),
            FieldSpec.from_config(spec.get("V", {"const": 0.0})),
            float(spec["gamma"]),
            dim,
        )

    def to_config(self) -> dict:
        return {"a": self.a.to_config(), "V": self.V.to_config(), "gamma": self.gamma}

    def _grid_cache(self, grid):
        if grid not in self._coords:
            x = grid.coords
            self._coords[grid] = (x, self.a(x), self.V(x))
        return grid

    def _aV(self, x):
        if isinstance(x, TorusGrid):
            return self._coords[x][1], self._coords[x][2]
        return self.a(x), self.V(x)

    def F(self, x, s):
        a, V = self._aV(x)
        return a * (1.0 + s) ** (0.5 * self.gamma) + V

    def F_s(self, x, s):
        a, _ = self._aV(x)
        return 0.5 * self.gamma * a * (1.0 + s) ** (0.5 * self.gamma - 1.0)

    def F_ss(self, x, s):
        a, _ = self._aV(x)
        g = 0.5 * self.gamma
        return g * (g - 1.0) * a * (1.0 + s) ** (g - 2.0)

    def F_x(self, x, s):
        return self.a.grad(x) * (1.0 + s) ** (0.5 * self.gamma) + self.V.grad(x)

    def F_xs(self, x, s):
        return 0.5 * self.gamma * self.a.grad(x) * (1.0 + s) ** (0.5 * self.gamma - 1.0)

    def legendre_fast(self, x, v):
        # radial reduction: p = -t v/|v| with a*gamma*(1+t^2)^(gamma/2-1)*t = |v|
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        a, V = self.a(x), self.V(x)
        speed = np.sqrt(_dot(v, v))
        t = _radial_root(lambda t: a * self.gamma * (1 + t * t) ** (0.5 * self.gamma - 1) * t, speed)
        L = t * speed - a * (1 + t * t) ** (0.5 * self.gamma) - V
        unit = np.divide(v, speed, out=np.zeros_like(v), where=speed > 0)
        return L, -t * unit


class PurePowerHamiltonian(RadialHamiltonian):
    """``H(p) = c |p|^gamma / gamma``; ``gamma = 2`` gives the quadratic case."""

    def __init__(self, gamma: float, scale: float = 1.0, dim: int = 1):
        if not gamma > 1:
            raise ValidationError(f"gamma must exceed 1, got {gamma}")
        self.gamma = float(gamma)
        self.c = float(scale)
        self.dim = dim

    def to_config(self) -> dict:
        return {"pure_power": self.gamma, "scale": self.c}

    def F(self, x, s):
        return self.c * np.asarray(s, dtype=float) ** (0.5 * self.gamma) / self.gamma

    def F_s(self, x, s):
        return 0.5 * self.c * _spow(s, 0.5 * self.gamma - 1.0)

    def F_ss(self, x, s):
        e = 0.5 * self.gamma - 1.0
        if e == 0:
            return np.zeros(np.shape(s))
        return 0.5 * self.c * e * _spow(s, e - 1.0)

    def F_x(self, x, s):
        return np.zeros((self.dim,) + np.shape(s))

    def F_xs(self, x, s):
        return np.zeros((self.dim,) + np.shape(s))

    def DpH(self, x, p):
        p = np.asarray(p, dtype=float)
        r = np.sqrt(_dot(p, p))
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(r > 0, r ** (self.gamma - 2.0), 0.0)
        return self.c * w * p

    def numerical(self, grid, dminus, dplus, upwind=True):
        x = grid.coords
        if upwind:
            lo = np.maximum(dminus, 0.0)
            hi = np.minimum(dplus, 0.0)
            s = _dot(lo, lo) + _dot(hi, hi)
        else:
            lo = hi = 0.5 * (dminus + dplus)
            s = _dot(lo, lo)
        r = np.sqrt(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = self.c * np.where(r > 0, r ** (self.gamma - 2.0), 0.0)
        if upwind:
            return self.F(x, s), w * lo, w * hi
        return self.F(x, s), 0.5 * w * lo, 0.5 * w * hi

    def legendre_fast(self, x, v):
        v = np.asarray(v, dtype=float)
        gp = self.gamma / (self.gamma - 1.0)
        speed = np.sqrt(_dot(v, v))
        L = speed**gp * self.c ** (-1.0 / (self.gamma - 1.0)) / gp
        t = (speed / self.c) ** (1.0 / (self.gamma - 1.0))
        unit = np.divide(v, speed, out=np.zeros_like(v), where=speed > 0)
        return L, -t * unit


class LinearDriftHamiltonian(Hamiltonian):
    """``H(x, p) = b(x).p`` with ``b = sign * grad W``; a verification fixture.

    Not convex, so the assumption checks do not apply; it exists to drive the
    Fokker-Planck solvers with a prescribed drift.
    """

    def __init__(self, W: FieldSpec, sign: float = 1.0, dim: int = 1):
        self.W = W
        self.sign = float(sign)
        self.dim = dim

    def to_config(self) -> dict:
        return {"linear_drift": self.W.to_config(), "sign": self.sign}

    def drift(self, x):
        return self.sign * self.W.grad(x)

    def H(self, x, p):
        return _dot(self.drift(x), p)

    def DpH(self, x, p):
        return self.drift(x) + 0.0 * np.asarray(p)

    def DxH(self, x, p):
        hess = self.sign * self.W.hess(x)
        return np.sum(hess * np.asarray(p)[None, :], axis=1)

    def Dpp(self, x, p):
        d = np.shape(p)[0]
        return np.zeros((d, d) + np.shape(p)[1:])

    def Dxp(self, x, p):
        return self.sign * self.W.hess(x) + 0.0 * np.asarray(p)[None, :]

    def numerical(self, grid, dminus, dplus, upwind=True):
        b = self.drift(grid.coords)
        if upwind:
            lo, hi = np.maximum(b, 0.0), np.minimum(b, 0.0)
        else:
            lo = hi = 0.5 * b
        return _dot(lo, dminus) + _dot(hi, dplus), lo, hi


def _radial_root(phi, target, tol=1e-14, max_iter=200):
    """Solve ``phi(t) = target`` for increasing ``phi`` with ``phi(0) = 0``, elementwise."""
    target = np.asarray(target, dtype=float)
    lo = np.zeros_like(target)
    hi = np.ones_like(target)
    for _ in range(200):
        short = phi(hi) < target
        if not short.any():
            break
        hi = np.where(short, 2 * hi, hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = phi(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(1.0, hi)):
            break
    return 0.5 * (lo + hi)


# -- Legendre transform -------------------------------------------------------


def _legendre_ascent(model, x, v, tol, max_iter):
    """Damped Newton ascent on ``p -> -p.v - H(x, p)``, vectorized over points."""
    p = np.zeros_like(v)
    obj = lambda p: -_dot(p, v) - model.H(x, p)  # noqa: E731
    f = obj(p)
    for _ in range(max_iter):
        g = -v - model.DpH(x, p)
        gnorm = np.sqrt(_dot(g, g))
        if np.all(gnorm <= tol * np.maximum(1.0, np.sqrt(_dot(v, v)))):
            return f, p
        hess = np.moveaxis(model.Dpp(x, p), (0, 1), (-2, -1))
        step = np.moveaxis(g, 0, -1).copy()
        ok = np.all(np.isfinite(hess), axis=(-2, -1))
        if ok.any():
            step[ok] = np.linalg.solve(hess[ok], step[ok][..., None])[..., 0]
        step = np.moveaxis(step, -1, 0)
        t = np.ones(gnorm.shape)
        for _ in range(60):
            trial = p + t * step
            ft = obj(trial)
            # near the optimum the gain drops below the objective's rounding noise
            worse = ~(ft >= f - 1e-12 * (1.0 + np.abs(f)))
            if not worse.any():
                break
            t = np.where(worse, 0.5 * t, t)
        p = p + t * step
        f = obj(p)
    raise ConvergenceError("Legendre ascent did not converge", history=[float(np.max(gnorm))])


def legendre(model: Hamiltonian, x, v, method: str = "auto", tol: float = 1e-10, max_iter: int = 200):
    """Lagrangian ``L(x, v) = sup_p [-p.v - H(x, p)]`` and its maximizer.

    ``method="auto"`` uses the model's closed form when it has one and the
    damped ascent otherwise; ``"ascent"`` forces the numerical route.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if method in ("auto", "fast"):
        fast = model.legendre_fast(x, v)
        if fast is not None:
            return fast
        if method == "fast":
            raise ValidationError("model has no closed-form Lagrangian")
    return _legendre_ascent(model, x, v, tol, max_iter)


def lagrangian_at_feedback(model: Hamiltonian, x, p):
    """``L(x, -DpH(x, p)) = DpH.p - H``, the Lagrangian along the optimal feedback."""
    return _dot(model.DpH(x, p), p) - model.H(x, p)


def biconjugate(model: Hamiltonian, x, p, tol: float = 1e-11) -> float:
    """``sup_v [-v.p - L(x, v)]`` at one point, with ``L`` from the ascent route.

    The outer supremum uses BFGS with the envelope gradient ``dL/dv = -p*(v)``,
    so it shares no code path with the inner maximization.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    p = np.asarray(p, dtype=float).reshape(-1)

    def neg(vv):
        L, pstar = legendre(model, x, vv.reshape(-1, 1), method="ascent")
        val = -(-vv @ p - L[0])
        grad = p - pstar[:, 0]
        return val, grad

    v0 = -model.DpH(x, p.reshape(-1, 1))[:, 0] * 0.5
    res = scipy.optimize.minimize(neg, v0, jac=True, method="BFGS", options={"gtol": tol, "maxiter": 500})
    return float(-res.fun)


# -- sampled assumption checks ----------------------------------------------------


@dataclass
class SampleSpec:
    n_x: int = 16
    n_p: int = 64
    p_max: float = 10.0
    n_triples: int = 10_000
    m_max: float = 10.0
    seed: int = 0

    def box(self) -> dict:
        return {
            "x_nodes_per_axis": self.n_x,
            "p_samples": self.n_p,
            "p_max": self.p_max,
            "triples": self.n_triples,
            "matrix_norm_max": self.m_max,
        }


@dataclass
class GrowthConstants:
    C1: float
    C2: float
    passed: bool
    n_samples: int
    box: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)


def _ball(rng, d, n, radius):
    dirs = rng.standard_normal((d, n))
    dirs /= np.linalg.norm(dirs, axis=0)
    r = radius * rng.random(n) ** (1.0 / d)
    return dirs * r


def _pairs(model: Hamiltonian, spec: SampleSpec):
    d = model.dim
    rng = np.random.default_rng(spec.seed)
    xs = np.arange(spec.n_x) / spec.n_x
    X = np.stack(np.meshgrid(*([xs] * d), indexing="ij")).reshape(d, -1)
    P = _ball(rng, d, spec.n_p, spec.p_max)
    P[:, 0] = 0.0
    P[:, 1] = 0.0
    P[0, 1] = spec.p_max
    nx, npts = X.shape[1], P.shape[1]
    x = np.repeat(X, npts, axis=1)
    p = np.tile(P, (1, nx))
    if x.shape[1] < 100:
        raise ValidationError(f"assumption sample has {x.shape[1]} < 100 points")
    return x, p


def _require_growth(model):
    if model.gamma is None:
        raise ValidationError("model has no growth exponent; assumption checks do not apply")


def check_A1(model: Hamiltonian, spec: SampleSpec | None = None) -> GrowthConstants:
    """Fit constants for the two-sided growth, ``|DpH|`` and ``|DxH|`` bounds.

    Each ``C2`` comes from the outer shell ``|p| >= p_max/2``; ``C1`` then
    absorbs the largest violation over the whole sample. Strict convexity is
    checked by the smallest eigenvalue of ``Dpp`` over the same sample.
    """
    spec = spec or SampleSpec()
    _require_growth(model)
    g = model.gamma
    x, p = _pairs(model, spec)
    r = np.sqrt(_dot(p, p))
    H = model.H(x, p)
    dp = np.sqrt(_dot(model.DpH(x, p), model.DpH(x, p)))
    dx = np.sqrt(_dot(model.DxH(x, p), model.DxH(x, p)))
    outer = r >= 0.5 * spec.p_max
    with np.errstate(divide="ignore", invalid="ignore"):
        C2 = max(
            np.max(H[outer] / r[outer] ** g),
            np.max(r[outer] ** g / H[outer]),
            np.max(dp[outer] / r[outer] ** (g - 1)),
            np.max(dx / np.where(H > 0, H, np.nan), initial=0.0, where=H > 0),
            1e-12,
        )
    C1 = max(
        0.0,
        np.max(H - C2 * r**g),
        np.max(r**g / C2 - H),
        np.max(dp - C2 * r ** (g - 1)),
        np.max(dx - C2 * H),
    )
    slack = 1e-9 * max(1.0, C1)
    holds = (
        np.all(H <= C1 + C2 * r**g + slack)
        and np.all(r**g / C2 - C1 <= H + slack)
        and np.all(dp <= C1 + C2 * r ** (g - 1) + slack)
        and np.all(dx <= C1 + C2 * H + slack)
    )
    eig = np.linalg.eigvalsh(np.moveaxis(model.Dpp(x, p), (0, 1), (-2, -1)))
    min_eig = float(np.min(eig))
    nonneg = bool(np.min(H) >= 0)
    passed = bool(np.isfinite(C1) and np.isfinite(C2) and holds and min_eig > 0 and nonneg)
    return GrowthConstants(
        float(C1),
        float(C2),
        passed,
        x.shape[1],
        spec.box(),
        {"min_hessian_eig": min_eig, "min_H": float(np.min(H))},
    )


def hessian_min_eigenvalue(model: Hamiltonian, n: int = 1000, p_max: float = 10.0, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    x = rng.random((model.dim, n))
    p = _ball(rng, model.dim, n, p_max)
    hess = np.moveaxis(model.Dpp(x, p), (0, 1), (-2, -1))
    if not np.allclose(hess, np.swapaxes(hess, -1, -2)):
        return -np.inf
    return float(np.min(np.linalg.eigvalsh(hess)))


def check_A2(model: Hamiltonian, spec: SampleSpec | None = None) -> GrowthConstants:
    """Fit ``DpH.p - H >= H/C2 - C1`` on the sample."""
    spec = spec or SampleSpec()
    _require_growth(model)
    x, p = _pairs(model, spec)
    r = np.sqrt(_dot(p, p))
    H = model.H(x, p)
    lag = _dot(model.DpH(x, p), p) - H
    outer = (r >= 0.5 * spec.p_max) & (H > 0)
    ratio = np.min(lag[outer] / H[outer]) if outer.any() else np.nan
    if not ratio > 0:
        return GrowthConstants(np.inf, np.inf, False, x.shape[1], spec.box(), {"min_ratio": float(ratio)})
    C2 = 1.0 / ratio
    C1 = max(0.0, float(np.max(H / C2 - lag)))
    holds = bool(np.all(lag >= H / C2 - C1 - 1e-9 * max(1.0, C1)))
    return GrowthConstants(C1, float(C2), holds, x.shape[1], spec.box(), {"min_ratio": float(ratio)})


@dataclass
class TraceCheck:
    table: list
    passed: bool
    n_samples: int
    box: dict
    witness: dict | None = None


def _sym_matrices(rng, d, n, m_max):
    A = rng.standard_normal((n, d, d))
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    norms = np.max(np.abs(np.linalg.eigvalsh(A)), axis=1)
    scale = m_max * rng.random(n) / np.where(norms > 0, norms, 1.0)
    return A * scale[:, None, None]


def check_A3(model: Hamiltonian, spec: SampleSpec | None = None, deltas=(0.1, 0.25, 0.5, 0.75, 0.9)) -> TraceCheck:
    """Smallest ``C_delta`` with ``Tr(Dxp M) <= delta Tr(Dpp M^2) + C_delta H`` on random triples."""
    spec = spec or SampleSpec()
    _require_growth(model)
    if any(not 0 < dl < 1 for dl in deltas):
        raise ValidationError("deltas must lie in (0, 1)")
    if spec.n_triples < 100:
        raise ValidationError(f"assumption sample has {spec.n_triples} < 100 points")
    d = model.dim
    rng = np.random.default_rng(spec.seed + 1)
    x = rng.random((d, spec.n_triples))
    p = _ball(rng, d, spec.n_triples, spec.p_max)
    M = _sym_matrices(rng, d, spec.n_triples, spec.m_max)
    M[0] = 0.0
    H = model.H(x, p)
    dxp = np.moveaxis(model.Dxp(x, p), (0, 1), (-2, -1))
    dpp = np.moveaxis(model.Dpp(x, p), (0, 1), (-2, -1))
    tr_xp = np.einsum("nij,nji->n", dxp, M)
    tr_pp = np.einsum("nij,njk,nki->n", dpp, M, M)
    table = []
    witness = None
    passed = True
    for dl in deltas:
        excess = tr_xp - dl * tr_pp
        with np.errstate(divide="ignore", invalid="ignore"):
            need = np.where(excess > 0, excess / H, 0.0)
        C = float(max(0.0, np.max(need)))
        if not np.isfinite(C):
            passed = False
            k = int(np.argmax(need))
            witness = {"x": x[:, k].tolist(), "p": p[:, k].tolist(), "M": M[k].tolist(), "delta": dl}
        table.append((float(dl), C))
    return TraceCheck(table, passed, spec.n_triples, spec.box(), witness)


def gamma_gate_A4(gamma: float, d: int) -> bool:
    return bool(1.0 < gamma < (d + 2) / (d + 1))


def alpha_threshold_A5(d: int, gamma: float) -> float:
    """Threshold on the singularity exponent for the stationary theory.

    ``d = 1`` is treated as ``gamma < d/(d-1) = inf`` and gives 0.
    """
    if d < 1 or not gamma > 1:
        raise ValidationError(f"need d >= 1 and gamma > 1, got d={d}, gamma={gamma}")
    if d == 1:
        return 0.0
    if gamma < d / (d - 1):
        return 0.0
    if d == 2:
        return 1.0
    upper = np.inf if d == 3 else (d - 2) / (d - 3)
    if gamma < upper:
        return max(gamma / (gamma * (3 - d) + d - 2), 1.0)
    return np.inf
