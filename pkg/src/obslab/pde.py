"""Method-of-lines co-simulation of the ODE-PDE observer.

The delayed output is carried by the transport equation ``U_t = U_x`` on
``x in [0, D]`` with inflow ``U(D, t) = C X(t)`` and outflow ``Y(t) = U(0, t)``.
The observer copy ``U_hat`` adds the source ``C Phi(x, 0) f(t)`` where
``f = P^-1 C^T Sigma (Y - U_hat(0, t))``. This module discretizes ``x`` on
``m`` cells with first-order upwinding and is only used to cross-check the
PDE-free observer and to evaluate error norms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .history import rotate_blocks
from .riccati import NumericalBlowUp, gain_apply, rk4_riccati
from .se2 import STATE_DIM, rk4_state_step


class CFLViolation(ValueError):
    pass


@dataclass
class TransportGrid:
    m: int
    delta_x: float
    u_hat: np.ndarray  # (m + 1, 2N), node j sits at x = j * delta_x

    @classmethod
    def filled(cls, delay: float, m: int, value) -> "TransportGrid":
        if m < 1 or delay <= 0:
            raise ValueError("a transport grid needs m >= 1 cells and a positive delay")
        value = np.asarray(value, dtype=float)
        return cls(m, delay / m, np.tile(value, (m + 1, 1)))

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.m + 1) * self.delta_x

    @property
    def delay(self) -> float:
        return self.m * self.delta_x

    def outflow(self) -> np.ndarray:
        return self.u_hat[0].copy()


def step_transport(grid: TransportGrid, boundary, source=None, dt: float = 0.0) -> TransportGrid:
    """One explicit upwind step of ``U_t = U_x + source``; returns a new grid.

    ``boundary`` is the inflow value ``U(D, t + dt)``; ``source`` is an
    ``(m + 1, 2N)`` array evaluated at the start of the step (or None).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt > grid.delta_x * (1.0 + 1e-12):
        raise CFLViolation(f"CFL violated: dt={dt} > delta_x={grid.delta_x}")
    u = grid.u_hat
    lam = dt / grid.delta_x
    new = np.empty_like(u)
    new[:-1] = u[:-1] + lam * (u[1:] - u[:-1])
    if source is not None:
        new[:-1] += dt * source[:-1]
    new[-1] = boundary
    return TransportGrid(grid.m, grid.delta_x, new)


def injection_source(c: np.ndarray, node_angles: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``C Phi(x_j, 0) f`` for every node, Phi given by its transition angle."""
    rotated = rotate_blocks(node_angles, np.broadcast_to(f, (len(node_angles), STATE_DIM)))
    return rotated @ c.T


class OdePdeObserver:
    """Predictive observer in its ODE-PDE form, discretized by the method of lines.

    ``node_angles(t)`` returns the transition angles of ``Phi(x_j, 0)`` at the
    grid nodes, and ``injection_angle(t)`` the angle of ``Phi(D, 0)``; for the
    literal window both are constant.
    """

    def __init__(self, c, sigma, epsilon, delay, dt, m, x_hat0, node_angles, injection_angle, p0=None):
        self.c = np.asarray(c, dtype=float)
        self.cts = self.c.T @ np.asarray(sigma, dtype=float)
        self.q = self.cts @ self.c
        self.epsilon = float(epsilon)
        self.dt = float(dt)
        self.x_hat = np.array(x_hat0, dtype=float)
        self.p = 0.5 * np.eye(STATE_DIM) if p0 is None else np.array(p0, dtype=float)
        self.grid = TransportGrid.filled(delay, m, self.c @ self.x_hat)
        if dt > self.grid.delta_x * (1.0 + 1e-12):
            raise CFLViolation(f"CFL violated: dt={dt} > delta_x={self.grid.delta_x}")
        self._node_angles = node_angles
        self._injection_angle = injection_angle
        self.t = 0.0

    def output(self):
        return self.grid.outflow()

    def step(self, y, omegas, vs, t, dt=None):
        dt = self.dt if dt is None else dt
        f = gain_apply(self.p, self.cts @ (np.asarray(y, dtype=float) - self.grid.u_hat[0]))
        ang = self._injection_angle(t)
        inj = rotate_blocks(np.array([ang]), f[None, :])[0] if ang != 0.0 else f
        source = injection_source(self.c, self._node_angles(t), f)
        self.x_hat = rk4_state_step(self.x_hat, dt, omegas, vs, extra=inj)
        if not np.all(np.isfinite(self.x_hat)):
            raise NumericalBlowUp(f"ODE-PDE observer state became non-finite at t={t}")
        self.p = rk4_riccati(self.p, dt, omegas, self.q, self.epsilon)
        self.grid = step_transport(self.grid, self.c @ self.x_hat, source, dt)
        self.t = t + dt
        return self


def _values(g):
    return g.u_hat if isinstance(g, TransportGrid) else np.asarray(g, dtype=float)


def trapezoid_nodes(values: np.ndarray, delta_x: float) -> float:
    w = np.full(len(values), delta_x)
    w[0] = w[-1] = 0.5 * delta_x
    return float(w @ values)


def error_norm(grid_truth, grid_obs, x_tilde, delta_x: float | None = None) -> float:
    """sqrt(|X_tilde|^2 + int_0^D |U - U_hat|^2 dx), trapezoid over the nodes."""
    truth, obs = _values(grid_truth), _values(grid_obs)
    if truth.shape != obs.shape:
        raise ValueError("grids are not aligned")
    if delta_x is None:
        for g in (grid_truth, grid_obs):
            if isinstance(g, TransportGrid):
                delta_x = g.delta_x
                break
        else:
            raise ValueError("delta_x is required for bare node arrays")
    x_tilde = np.asarray(x_tilde, dtype=float)
    du = truth - obs
    return float(np.sqrt(x_tilde @ x_tilde + trapezoid_nodes(np.einsum("ij,ij->i", du, du), delta_x)))


def composite_error(grid_truth, grid_obs, x_tilde, phi_angles, c) -> np.ndarray:
    """W(x_j) = U_tilde(x_j) - C Phi(x_j, D) X_tilde per node.

    ``phi_angles`` holds the transition angle of ``Phi(x_j, D)`` at every
    node; the last node (x = D) has angle 0.
    """
    truth, obs = _values(grid_truth), _values(grid_obs)
    if truth.shape != obs.shape:
        raise ValueError("grids are not aligned")
    x_tilde = np.asarray(x_tilde, dtype=float)
    rotated = rotate_blocks(np.asarray(phi_angles, dtype=float),
                            np.broadcast_to(x_tilde, (len(truth), STATE_DIM)))
    return (truth - obs) - rotated @ np.asarray(c, dtype=float).T
