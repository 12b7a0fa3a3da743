"""The regularized singular coupling ``g_eps(m) = -(m + eps)^(-alpha)``."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import SingularityError, ValidationError


@dataclass(frozen=True)
class CouplingParams:
    alpha: float
    eps: float = 0.0
    weight: float = 1.0  # 0 switches the coupling off (decoupled test runs)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")
        if self.eps < 0:
            raise ValidationError(f"eps must be nonnegative, got {self.eps}")

    def with_eps(self, eps: float) -> "CouplingParams":
        return replace(self, eps=float(eps))


def _shifted(m, params: CouplingParams) -> np.ndarray:
    z = np.asarray(m, dtype=float) + params.eps
    bad = ~(z > 0)
    if bad.any():
        idx = np.unravel_index(int(np.argmax(bad)), z.shape) if z.ndim else ()
        raise SingularityError(f"m + eps <= 0 at node {tuple(int(i) for i in idx)}", index=idx)
    return z


def g_eps(m, params: CouplingParams) -> np.ndarray:
    if params.weight == 0:
        return np.zeros(np.shape(m))
    return -params.weight * _shifted(m, params) ** (-params.alpha)


def g_eps_derivative(m, params: CouplingParams) -> np.ndarray:
    if params.weight == 0:
        return np.zeros(np.shape(m))
    return params.weight * params.alpha * _shifted(m, params) ** (-params.alpha - 1.0)


def inverse_power(m, params: CouplingParams, p: float) -> np.ndarray:
    """``(m + eps)^(-p)``; the singular weight without the coupling's sign and weight."""
    return _shifted(m, params) ** (-p)


def convex_power(z, alpha: float):
    """``z^(1-alpha)/(alpha-1)``, with ``-ln z`` at ``alpha = 1``."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise SingularityError("convex_power needs z > 0")
    if alpha == 1:
        return -np.log(z)
    return z ** (1.0 - alpha) / (alpha - 1.0)
