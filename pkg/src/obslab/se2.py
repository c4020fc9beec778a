"""Planar rigid-body kinematics and its embedding in R^6.

A pose (R, P) on SE(2) is stacked into the state vector
``X = [P, r1, r2]`` where ``r1``, ``r2`` are the columns of ``R``. In that
coordinate the kinematics are state affine, ``dX/dt = A(w) X + B(v)`` with
``A(w) = -blockdiag(S(w), S(w), S(w))`` and ``B(v) = [v, 0, 0]``.

Because every 2x2 skew block commutes with every other one, the transition
matrix of ``dX/dt = A X`` only depends on the scalar integral of the angular
velocity and is a rotation in each block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

STATE_DIM = 6

# A(w) = w * GENERATOR
GENERATOR = -np.kron(np.eye(3), np.array([[0.0, -1.0], [1.0, 0.0]]))


def rot(angle: float) -> np.ndarray:
    """Counter-clockwise rotation matrix by ``angle`` radians."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def skew(omega: float) -> np.ndarray:
    """S(w) = [[0, -w], [w, 0]]."""
    return np.array([[0.0, -omega], [omega, 0.0]])


def project_so2(m: np.ndarray) -> np.ndarray:
    """Nearest rotation to ``m``: normalized first column plus its perpendicular."""
    a = np.asarray(m, dtype=float)[:, 0]
    n = math.hypot(a[0], a[1])
    if n == 0.0:
        raise ValueError("cannot project a matrix with zero first column onto SO(2)")
    c, s = a[0] / n, a[1] / n
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Rotation2:
    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float).reshape(2, 2)
        object.__setattr__(self, "entries", m)

    @classmethod
    def from_angle(cls, angle: float) -> "Rotation2":
        return cls(rot(angle))

    @property
    def angle(self) -> float:
        return math.atan2(self.entries[1, 0], self.entries[0, 0])

    def is_valid(self, tol: float = 1e-9) -> bool:
        m = self.entries
        return bool(
            np.allclose(m.T @ m, np.eye(2), atol=tol)
            and abs(np.linalg.det(m) - 1.0) <= tol
        )


@dataclass(frozen=True)
class Pose:
    rotation: Rotation2
    position: np.ndarray

    def __post_init__(self):
        if not isinstance(self.rotation, Rotation2):
            object.__setattr__(self, "rotation", Rotation2(self.rotation))
        object.__setattr__(
            self, "position", np.asarray(self.position, dtype=float).reshape(2)
        )


@dataclass(frozen=True)
class VelocityInput:
    """Angular rate ``omega`` (rad/s) and body-frame linear velocity ``v`` (m/s)."""

    omega: float
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(2))

    def is_finite(self) -> bool:
        return math.isfinite(self.omega) and bool(np.all(np.isfinite(self.v)))


@dataclass(frozen=True)
class TransitionMatrix:
    """Phi(t, t0) stored as its repeated 2x2 rotation block."""

    block: Rotation2

    def matrix(self) -> np.ndarray:
        return np.kron(np.eye(3), self.block.entries)

    def __matmul__(self, other):
        if isinstance(other, TransitionMatrix):
            return TransitionMatrix(Rotation2(self.block.entries @ other.block.entries))
        return apply_blocks(self.block.entries, np.asarray(other, dtype=float))

    @property
    def T(self) -> "TransitionMatrix":
        return TransitionMatrix(Rotation2(self.block.entries.T))


def apply_blocks(r: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Multiply each consecutive 2-block of ``x`` (last axis, length 6) by ``r``."""
    blocks = x.reshape(x.shape[:-1] + (3, 2))
    return (blocks @ r.T).reshape(x.shape)


def embed(pose: Pose) -> np.ndarray:
    r = pose.rotation.entries
    return np.concatenate([pose.position, r[:, 0], r[:, 1]])


def unembed(x: np.ndarray, project: bool = False) -> Pose:
    x = np.asarray(x, dtype=float).reshape(STATE_DIM)
    r = np.column_stack([x[2:4], x[4:6]])
    if project:
        r = project_so2(r)
    return Pose(Rotation2(r), x[0:2].copy())


def system_matrices(u: VelocityInput) -> tuple[np.ndarray, np.ndarray]:
    """A(w) and B(v) of the embedded kinematics."""
    a = u.omega * GENERATOR
    b = np.zeros(STATE_DIM)
    b[0:2] = u.v
    return a, b


def state_derivative(x: np.ndarray, omega: float, v: np.ndarray) -> np.ndarray:
    """A(w) x + B(v), without forming A."""
    dx = np.empty(STATE_DIM)
    # -S(w) [a, b] = w [b, -a]
    dx[0::2] = omega * x[1::2]
    dx[1::2] = -omega * x[0::2]
    dx[0] += v[0]
    dx[1] += v[1]
    return dx


def transition(omega_integral: float) -> TransitionMatrix:
    """Phi = exp(-blockdiag(S(w_int))) for the signed angle ``omega_integral``."""
    return TransitionMatrix(Rotation2(rot(-omega_integral)))


def integrate_pose(
    pose: Pose,
    u_profile: Callable[[float], VelocityInput],
    t0: float,
    t1: float,
    dt: float,
) -> Pose:
    """Fixed-step RK4 on the pose kinematics, re-projecting R onto SO(2) each step.

    The last step is shortened so the integration ends exactly at ``t1``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t1 < t0:
        raise ValueError("t1 must not precede t0")

    def u_at(t):
        u = u_profile(t)
        if not u.is_finite():
            raise ValueError(f"non-finite velocity input at t={t}")
        return u

    x = embed(pose)
    t = t0
    n = int(math.ceil((t1 - t0) / dt - 1e-12))
    for i in range(n):
        h = min(dt, t1 - t)
        u0, um, u1 = u_at(t), u_at(t + 0.5 * h), u_at(t + h)
        x = rk4_state_step(x, h, (u0.omega, um.omega, u1.omega), (u0.v, um.v, u1.v))
        r = project_so2(np.column_stack([x[2:4], x[4:6]]))
        x[2:4], x[4:6] = r[:, 0], r[:, 1]
        t = t0 + (i + 1) * dt if i + 1 < n else t1
    return unembed(x)


def rk4_state_step(x, h, omegas, vs, extra=None):
    """One RK4 step of A(w) x + B(v) + extra.

    ``omegas`` and ``vs`` hold the input at the start, midpoint and end of the
    step; ``extra`` is a constant (zero-order held) forcing term. Each 2-vector
    block ``(a, b)`` is handled as the complex number ``a + ib``, for which
    ``A(w)`` acts as multiplication by ``-iw``.
    """
    (w0, wm, w1), (v0, vm, v1) = omegas, vs
    z = np.ascontiguousarray(x, dtype=float).view(np.complex128).tolist()
    if extra is None:
        ex = [0j, 0j, 0j]
    else:
        ex = np.ascontiguousarray(extra, dtype=float).view(np.complex128).tolist()
    r0, rm, r1 = -1j * w0, -1j * wm, -1j * w1
    half, sixth = 0.5 * h, h / 6.0
    out = []
    for j in range(3):
        zj, e = z[j], ex[j]
        if j == 0:
            b0 = complex(v0[0], v0[1]) + e
            bm = complex(vm[0], vm[1]) + e
            b1 = complex(v1[0], v1[1]) + e
        else:
            b0 = bm = b1 = e
        k1 = r0 * zj + b0
        k2 = rm * (zj + half * k1) + bm
        k3 = rm * (zj + half * k2) + bm
        k4 = r1 * (zj + h * k3) + b1
        out.append(zj + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    return np.array(out, dtype=np.complex128).view(np.float64)
