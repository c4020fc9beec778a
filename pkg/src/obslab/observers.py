"""Predictive and standard observers for the delayed-output kinematics.

Both observers run on the same fixed step ``dt`` as the truth model. One call
to ``step`` consumes the measurement ``Y(t)`` taken at grid time ``t``, forms
the output estimate, and advances ``X_hat`` and ``P`` to ``t + dt``.

Predictive observer (PDE-free form)::

    dX_hat/dt = A X_hat + B + Phi(D, 0) P^-1 C^T Sigma (Y - Y_hat)
    Y_hat(t)  = C X_hat(t - D) + C int_{t-D}^{t} Phi(t - theta, 0) f(theta) dtheta
    f         = P^-1 C^T Sigma (Y - Y_hat)

Standard observer: ``Y_hat(t) = C X_hat(t - D)`` and no transition factor.
"""

from __future__ import annotations

import math

import numpy as np

from .history import (
    LITERAL,
    PHI_WINDOWS,
    SLIDING,
    TIME_TOL,
    DelayLine,
    trapezoid_weights,
)
from .riccati import GainState, NumericalBlowUp, gain_apply, rk4_riccati
from .se2 import STATE_DIM, rk4_state_step


def _delay_steps(delay, dt):
    n = int(round(delay / dt))
    if abs(n * dt - delay) > TIME_TOL:
        raise ValueError(f"delay {delay} must be a multiple of dt {dt}")
    return n


class _ObserverBase:
    def __init__(self, c, sigma, epsilon, delay, dt, x_hat0, p0=None):
        self.c = np.asarray(c, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        self.epsilon = float(epsilon)
        self.delay = float(delay)
        self.dt = float(dt)
        self.n_delay = _delay_steps(delay, dt)
        self.q = self.c.T @ self.sigma @ self.c
        self.cts = self.c.T @ self.sigma
        self.x_hat = np.array(x_hat0, dtype=float).reshape(STATE_DIM)
        self.p = 0.5 * np.eye(STATE_DIM) if p0 is None else np.array(p0, dtype=float)
        # X_hat(s) = X_hat(0) for s < 0
        self.x_hat_line = DelayLine(delay, dt, STATE_DIM, prefill=self.x_hat)
        self.t = 0.0
        self.y_hat = None
        self.residual = None

    @property
    def gain(self) -> GainState:
        return GainState(self.p.copy(), self.epsilon, self.sigma)

    def _record_current(self, t):
        if abs(t - self.t) > TIME_TOL:
            raise ValueError(f"observer is at t={self.t}, step called with t={t}")
        if self.x_hat_line.newest_time is None or self.x_hat_line.newest_time < t - TIME_TOL:
            self.x_hat_line.push(t, self.x_hat)

    def _advance(self, injection, omegas, vs, dt):
        self.x_hat = rk4_state_step(self.x_hat, dt, omegas, vs, extra=injection)
        if not np.all(np.isfinite(self.x_hat)):
            raise NumericalBlowUp(f"observer state became non-finite at t={self.t}")
        self.p = rk4_riccati(self.p, dt, omegas, self.q, self.epsilon)
        self.t = self.t + dt

    def _gain_residual(self, y, y_hat):
        return gain_apply(self.p, self.cts @ (y - y_hat))


class StandardObserver(_ObserverBase):
    """State-affine observer fed with the delayed output, without prediction."""

    def output(self, t):
        self._record_current(t)
        return self.c @ self.x_hat_line.query(t - self.delay)

    def step(self, y, omegas, vs, t, dt=None):
        dt = self.dt if dt is None else dt
        self.y_hat = self.output(t)
        self.residual = self._gain_residual(np.asarray(y, dtype=float), self.y_hat)
        self._advance(self.residual, omegas, vs, dt)
        return self


class PredictiveObserver(_ObserverBase):
    """Observer with the distributed-delay output predictor.

    ``phi_window`` selects how ``Phi(t - theta, 0)`` is built: ``literal``
    integrates w over ``[0, t - theta]`` using ``lag_angles`` (w integrated
    from time 0, sampled every ``dt`` and covering ``[0, D]``); ``sliding``
    integrates w over ``[theta, t]`` from the running integral pushed at
    every step.
    """

    def __init__(self, c, sigma, epsilon, delay, dt, x_hat0, p0=None,
                 phi_window=LITERAL, lag_angles=None):
        super().__init__(c, sigma, epsilon, delay, dt, x_hat0, p0)
        if phi_window not in PHI_WINDOWS:
            raise ValueError(f"phi_window must be one of {PHI_WINDOWS}")
        self.phi_window = phi_window
        n = self.n_delay
        self.residual_line = DelayLine(delay, dt, STATE_DIM)
        self.y_hat_line = DelayLine(delay, dt, self.c.shape[0])
        self.omega_integral_line = DelayLine(delay, dt, 1)
        self._omega_integral = 0.0
        self._weights = trapezoid_weights(n, dt) if n > 0 else np.zeros(1)
        if phi_window == LITERAL:
            if n > 0:
                if lag_angles is None or len(lag_angles) < n + 1:
                    raise ValueError("literal phi_window needs lag angles on [0, D]")
                lag = np.asarray(lag_angles[: n + 1], dtype=float)
                # oldest sample first: lag n ... 0
                ang = lag[::-1]
                self._wc = self._weights * np.cos(ang)
                self._ws = self._weights * np.sin(ang)
                self._inj_angle = float(lag[n])
            else:
                self._inj_angle = 0.0
            self._inj_cs = (math.cos(self._inj_angle), math.sin(self._inj_angle))
        self.lag_angles = None if lag_angles is None else np.asarray(lag_angles, dtype=float)

    def push_omega_integral(self, t, value):
        self._omega_integral = float(value)
        self.omega_integral_line.push(t, [value])

    def _angles(self):
        """Transition angles for the window samples and for Phi(D, 0)."""
        n = self.n_delay
        if self.phi_window == LITERAL:
            return None, self._inj_angle
        om = self.omega_integral_line.window(n + 1)[:, 0]
        ang = om[-1] - om
        return ang, float(ang[0])

    def distributed_term(self, head):
        """Trapezoid sum of Phi f over [t - D, t] with ``head`` as f(t)."""
        n = self.n_delay
        if n == 0:
            return np.zeros(STATE_DIM)
        f = self.residual_line.window(n)
        if self.phi_window == LITERAL:
            a = self._wc[:n] @ f + self._wc[n] * head
            b = self._ws[:n] @ f + self._ws[n] * head
        else:
            ang, _ = self._angles()
            wc = self._weights * np.cos(ang)
            ws = self._weights * np.sin(ang)
            a = wc[:n] @ f + wc[n] * head
            b = ws[:n] @ f + ws[n] * head
        out = np.empty(STATE_DIM)
        out[0::2] = a[0::2] + b[1::2]
        out[1::2] = a[1::2] - b[0::2]
        return out

    def output(self, t):
        """Y_hat(t); the theta = t endpoint reuses the last stored residual."""
        self._record_current(t)
        if self.phi_window == SLIDING and (
            self.omega_integral_line.newest_time is None
            or abs(self.omega_integral_line.newest_time - t) > TIME_TOL
        ):
            raise ValueError("push the w integral for time t before evaluating the output")
        base = self.x_hat_line.query(t - self.delay)
        head = self.residual_line.latest()
        return self.c @ (base + self.distributed_term(head))

    def injection(self, f):
        """``Phi(D, 0) f``."""
        if self.phi_window == SLIDING:
            _, angle = self._angles()
            cs, sn = math.cos(angle), math.sin(angle)
        else:
            cs, sn = self._inj_cs
        if sn == 0.0 and cs == 1.0:
            return f
        out = np.empty(STATE_DIM)
        out[0::2] = cs * f[0::2] + sn * f[1::2]
        out[1::2] = cs * f[1::2] - sn * f[0::2]
        return out

    def step(self, y, omegas, vs, t, dt=None, omega_integral=None):
        """Advance one step. ``omega_integral`` is the running w integral at ``t``."""
        dt = self.dt if dt is None else dt
        if omega_integral is not None:
            self.push_omega_integral(t, omega_integral)
        self.y_hat = self.output(t)
        f = self._gain_residual(np.asarray(y, dtype=float), self.y_hat)
        self.residual = f
        self.residual_line.push(t, f)
        self.y_hat_line.push(t, self.y_hat)
        self._advance(self.injection(f), omegas, vs, dt)
        return self


def predictive_output(state: PredictiveObserver, t: float, delay: float | None = None) -> np.ndarray:
    if delay is not None and abs(delay - state.delay) > TIME_TOL:
        raise ValueError("observer was built for a different delay")
    return state.output(t)


def step_predictive(state: PredictiveObserver, y_measured, u, t, dt, delay=None, omega_integral=None):
    """Step with a constant input ``u`` over the step."""
    if delay is not None and abs(delay - state.delay) > TIME_TOL:
        raise ValueError("observer was built for a different delay")
    return state.step(y_measured, (u.omega,) * 3, (u.v,) * 3, t, dt, omega_integral)


def step_standard(state: StandardObserver, y_measured, u, t, dt, delay=None):
    if delay is not None and abs(delay - state.delay) > TIME_TOL:
        raise ValueError("observer was built for a different delay")
    return state.step(y_measured, (u.omega,) * 3, (u.v,) * 3, t, dt)
