"""Analytic periodic fields described by the run-config ``field-spec``.

A field-spec is ``{"const": c}``, ``{"fourier": [[k, amp, phase], ...]}`` or
both; each Fourier term contributes ``amp * cos(2*pi*k.x + phase)``. ``k`` is
an integer (frequency along the first axis) or a list with one integer per axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class FourierTerm:
    k: tuple[int, ...]
    amp: float
    phase: float = 0.0


@dataclass(frozen=True)
class FieldSpec:
    const: float = 0.0
    terms: tuple[FourierTerm, ...] = field(default_factory=tuple)

    @classmethod
    def constant(cls, c: float) -> "FieldSpec":
        return cls(const=float(c))

    @classmethod
    def from_config(cls, spec) -> "FieldSpec":
        if isinstance(spec, (int, float)):
            return cls.constant(spec)
        if not isinstance(spec, dict) or not spec:
            raise ValidationError(f"bad field-spec {spec!r}")
        unknown = set(spec) - {"const", "fourier"}
        if unknown:
            raise ValidationError(f"unknown field-spec keys {sorted(unknown)}")
        terms = []
        for t in spec.get("fourier", []):
            if len(t) != 3:
                raise ValidationError(f"fourier term must be [k, amp, phase], got {t!r}")
            k, amp, phase = t
            k = (int(k),) if np.isscalar(k) else tuple(int(v) for v in k)
            terms.append(FourierTerm(k, float(amp), float(phase)))
        return cls(float(spec.get("const", 0.0)), tuple(terms))

    def to_config(self) -> dict:
        out: dict = {"const": self.const}
        if self.terms:
            out["fourier"] = [[list(t.k), t.amp, t.phase] for t in self.terms]
        return out

    def _wavevector(self, term: FourierTerm, dim: int) -> np.ndarray:
        if len(term.k) > dim:
            raise ValidationError(f"wavevector {term.k} has more than {dim} components")
        return np.array(term.k + (0,) * (dim - len(term.k)), dtype=float)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Evaluate at points ``x`` of shape ``(dim, ...)``."""
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[1:], self.const)
        for t in self.terms:
            kv = self._wavevector(t, x.shape[0])
            phase = 2 * np.pi * np.tensordot(kv, x, axes=1) + t.phase
            out = out + t.amp * np.cos(phase)
        return out

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for t in self.terms:
            kv = self._wavevector(t, x.shape[0])
            phase = 2 * np.pi * np.tensordot(kv, x, axes=1) + t.phase
            s = -t.amp * np.sin(phase)
            out = out + 2 * np.pi * kv.reshape((-1,) + (1,) * (x.ndim - 1)) * s
        return out

    def hess(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = x.shape[0]
        out = np.zeros((d, d) + x.shape[1:])
        for t in self.terms:
            kv = self._wavevector(t, d)
            phase = 2 * np.pi * np.tensordot(kv, x, axes=1) + t.phase
            c = -t.amp * np.cos(phase) * (2 * np.pi) ** 2
            out = out + np.multiply.outer(np.outer(kv, kv), c)
        return out

    def bounds(self) -> tuple[float, float]:
        """Crude (lower, upper) bounds from the triangle inequality."""
        spread = sum(abs(t.amp) for t in self.terms)
        return self.const - spread, self.const + spread

    def shifted(self, c: float) -> "FieldSpec":
        return FieldSpec(self.const + c, self.terms)

    def is_constant(self) -> bool:
        return all(t.amp == 0.0 or not any(t.k) for t in self.terms)
