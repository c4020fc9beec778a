"""Closed-form velocity profiles: an offset plus a sum of sinusoids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SineTerm:
    amplitude: float
    angular_freq: float  # rad/s
    phase: float = 0.0


@dataclass(frozen=True)
class Profile:
    """``offset + sum_k a_k sin(b_k t + phi_k)``, vectorized over ``t``."""

    offset: float = 0.0
    terms: tuple = ()

    @classmethod
    def constant(cls, value: float) -> "Profile":
        return cls(float(value), ())

    @classmethod
    def sinusoid(cls, amplitude, angular_freq, phase=0.0, offset=0.0) -> "Profile":
        return cls(float(offset), (SineTerm(float(amplitude), float(angular_freq), float(phase)),))

    @property
    def kind(self) -> str:
        if not self.terms:
            return "constant"
        return "sinusoid" if len(self.terms) == 1 else "sum_of_sinusoids"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.offset)
        for term in self.terms:
            out = out + term.amplitude * np.sin(term.angular_freq * t + term.phase)
        return out if out.ndim else float(out)

    def integral(self, t):
        """Exact integral of the profile over ``[0, t]``."""
        t = np.asarray(t, dtype=float)
        out = self.offset * t
        for term in self.terms:
            a, b, p = term.amplitude, term.angular_freq, term.phase
            if b == 0.0:
                out = out + a * np.sin(p) * t
            else:
                out = out + a / b * (np.cos(p) - np.cos(b * t + p))
        return out if np.ndim(out) else float(out)

    def scaled(self, factor: float) -> "Profile":
        return Profile(
            self.offset * factor,
            tuple(SineTerm(k.amplitude * factor, k.angular_freq, k.phase) for k in self.terms),
        )

    def is_constant(self) -> bool:
        return all(k.amplitude == 0.0 for k in self.terms)
