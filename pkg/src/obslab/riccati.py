"""Gain matrix dynamics of the state-affine observer.

P solves ``dP/dt = -eps P - A(u)^T P - P A(u) + C^T Sigma C``. With
``A(w) = w G`` and ``G`` skew this reads ``-eps P + w (G P - P G) + Q``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.linalg import lapack

from .se2 import GENERATOR, STATE_DIM, VelocityInput, transition

log = logging.getLogger(__name__)

# relative slack on the Gramian test; for scalar Sigma the Gramian equals alpha exactly
GRAMIAN_RTOL = 1e-9


class NumericalBlowUp(RuntimeError):
    """Raised when a state or gain matrix stops being finite."""


class InsufficientExcitation(ValueError):
    pass


@dataclass(frozen=True)
class GainState:
    p: np.ndarray
    epsilon: float
    sigma: np.ndarray

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))


@dataclass(frozen=True)
class ExcitationConstants:
    t_window: float
    alpha: float
    beta1: float
    beta2: float
    gramian_min_eig: float


def riccati_rhs(p, omega, q, epsilon):
    gp = GENERATOR @ p
    # G^T = -G, so G P - P G = G P + (G P)^T for symmetric P
    return -epsilon * p + omega * (gp + gp.T) + q


# vec(G P - P G) for row-major vec; G^T = -G
_COMMUTATOR = np.kron(GENERATOR, np.eye(STATE_DIM)) + np.kron(np.eye(STATE_DIM), GENERATOR)


def rk4_riccati(p, h, omegas, q, epsilon):
    """RK4 step with the input sampled at the start, midpoint and end of the step."""
    w0, wm, w1 = omegas
    pv = np.asarray(p, dtype=float).ravel()
    qv = np.asarray(q, dtype=float).ravel()
    k1 = w0 * (_COMMUTATOR @ pv) - epsilon * pv + qv
    y = pv + 0.5 * h * k1
    k2 = wm * (_COMMUTATOR @ y) - epsilon * y + qv
    y = pv + 0.5 * h * k2
    k3 = wm * (_COMMUTATOR @ y) - epsilon * y + qv
    y = pv + h * k3
    k4 = w1 * (_COMMUTATOR @ y) - epsilon * y + qv
    p = (pv + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).reshape(STATE_DIM, STATE_DIM)
    p = 0.5 * (p + p.T)
    if not np.all(np.isfinite(p)):
        raise NumericalBlowUp("gain matrix P became non-finite")
    return p


def step_riccati(state: GainState, u: VelocityInput, c: np.ndarray, dt: float) -> GainState:
    """Advance P by one RK4 step with ``u`` held over the step, then symmetrize."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = c.T @ state.sigma @ c
    p = rk4_riccati(state.p, dt, (u.omega,) * 3, q, state.epsilon)
    return replace(state, p=p)


def gain_apply(p: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``P x = b`` through a Cholesky factor, falling back to a pseudo-inverse."""
    factor, info = lapack.dpotrf(p, lower=1)
    if info != 0:
        log.warning("P is not positive definite; using pseudo-inverse")
        return np.linalg.pinv(p) @ b
    x, info = lapack.dpotrs(factor, b, lower=1)
    if info != 0:
        raise NumericalBlowUp(f"Cholesky solve failed (info={info})")
    return x


def gramian(c, sigma, omega_profile: Callable[[np.ndarray], np.ndarray], t, window, dt):
    """Trapezoid quadrature of Phi^T(tau,t) C^T Sigma C Phi(tau,t) over [t, t+window]."""
    n = max(1, int(round(window / dt)))
    taus = t + np.linspace(0.0, window, n + 1)
    w = np.asarray(omega_profile(taus), dtype=float) * np.ones_like(taus)
    angles = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(taus))])
    q = c.T @ sigma @ c
    acc = np.zeros_like(q)
    h = window / n
    for k, a in enumerate(angles):
        phi = transition(a).matrix()
        wk = 0.5 * h if k in (0, n) else h
        acc += wk * (phi.T @ q @ phi)
    return acc


def excitation_constants(
    c: np.ndarray,
    sigma: np.ndarray,
    epsilon: float,
    omega_profile: Callable[[np.ndarray], np.ndarray],
    horizon: float,
    dt: float,
    t_samples: int = 8,
    p0: np.ndarray | None = None,
) -> ExcitationConstants:
    """Smallest window T (multiple of ``dt``) meeting the Gramian excitation bound.

    The Gramian's smallest eigenvalue is checked at ``t_samples`` start times
    spread over ``[0, horizon - T]`` against ``alpha = T lmin(Sigma) lmin(C^T C)``.
    ``beta2`` is the running maximum of ``lmax(P)`` along ``[0, horizon]``
    starting from ``p0`` (default ``0.5 I``).
    """
    sig_min = np.linalg.eigvalsh(sigma)[0]
    ctc_min = np.linalg.eigvalsh(c.T @ c)[0]
    csc_min = np.linalg.eigvalsh(c.T @ sigma @ c)[0]
    n_max = int(math.floor(horizon / dt + 1e-9))
    found = None
    for k in range(1, n_max + 1):
        window = k * dt
        alpha = window * sig_min * ctc_min
        starts = np.linspace(0.0, max(horizon - window, 0.0), t_samples)
        g_min = min(
            np.linalg.eigvalsh(gramian(c, sigma, omega_profile, t0, window, dt))[0]
            for t0 in starts
        )
        if alpha > 0 and g_min >= alpha * (1.0 - GRAMIAN_RTOL):
            found = (window, alpha, g_min)
            break
    if found is None:
        raise InsufficientExcitation(
            f"insufficient excitation: no window T <= {horizon} s satisfies the Gramian bound"
        )
    window, alpha, g_min = found
    beta1 = 2.0 * window * math.exp(-epsilon * window) * csc_min
    beta2 = max_gain_eigenvalue(c, sigma, epsilon, omega_profile, horizon, dt, p0)
    return ExcitationConstants(window, alpha, beta1, beta2, g_min)


def max_gain_eigenvalue(c, sigma, epsilon, omega_profile, horizon, dt, p0=None):
    q = c.T @ sigma @ c
    p = 0.5 * np.eye(6) if p0 is None else np.asarray(p0, dtype=float)
    top = np.linalg.eigvalsh(p)[-1]
    n = int(round(horizon / dt))
    for k in range(n):
        t = k * dt
        ws = np.asarray(omega_profile(np.array([t, t + 0.5 * dt, t + dt])), dtype=float)
        ws = ws * np.ones(3)
        p = rk4_riccati(p, dt, tuple(ws), q, epsilon)
        top = max(top, np.linalg.eigvalsh(p)[-1])
    return float(top)
