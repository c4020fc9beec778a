"""Landmark geometry, the stacked output matrix and measurement noise."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .se2 import Pose, VelocityInput

# relative to the largest eigenvalue of C^T C
RANK_TOL = 1e-8

# numpy's default bit generator; its normal sampler is a ziggurat method
NOISE_GENERATOR = "PCG64 (numpy.random.default_rng), ziggurat normal sampler"


@dataclass(frozen=True)
class LandmarkSet:
    points: np.ndarray
    non_collinear: bool = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            raise ValueError("landmark set is empty")
        pts = pts.reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "non_collinear", _spans_plane(pts))

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, LandmarkSet):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(np.all(self.points == other.points))

    def __hash__(self):
        return hash(tuple(self.points.ravel().tolist()))


def _spans_plane(pts):
    if len(pts) < 3:
        return False
    d = pts[1:] - pts[0]
    return bool(np.linalg.matrix_rank(d, tol=1e-12 * max(1.0, np.abs(d).max())) == 2)


@dataclass(frozen=True)
class ObservabilityReport:
    ok: bool
    rank: int
    min_eigenvalue: float


def build_output_matrix(landmarks: LandmarkSet) -> np.ndarray:
    """Stack one ``[-I, p_i1 I, p_i2 I]`` row block per landmark (shape 2N x 6)."""
    pts = landmarks.points
    eye = np.eye(2)
    return np.vstack([np.hstack([-eye, p[0] * eye, p[1] * eye]) for p in pts])


def measure(pose: Pose, landmarks: LandmarkSet) -> np.ndarray:
    """q_i = R p_i - P for every landmark, stacked."""
    r = pose.rotation.entries
    q = landmarks.points @ r.T - pose.position
    return q.reshape(-1)


def measure_state(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return c @ x


def observability_check(landmarks: LandmarkSet) -> ObservabilityReport:
    c = build_output_matrix(landmarks)
    eig = np.linalg.eigvalsh(c.T @ c)
    tol = RANK_TOL * max(eig[-1], np.finfo(float).tiny)
    rank = int(np.sum(eig > tol))
    return ObservabilityReport(ok=rank == 6, rank=rank, min_eigenvalue=float(eig[0]))


def add_noise(
    y: np.ndarray,
    v: VelocityInput,
    rng_seed: int,
    sigma_landmark: float,
    sigma_velocity: float,
) -> tuple[np.ndarray, VelocityInput]:
    """Perturb a measurement and a velocity reading with i.i.d. Gaussian noise.

    The generator is seeded from ``rng_seed`` so a (seed, input) pair always
    gives the same output. For streams of samples use :class:`NoiseSource`.
    """
    if sigma_landmark < 0 or sigma_velocity < 0:
        raise ValueError("noise standard deviations must be non-negative")
    src = NoiseSource(rng_seed, sigma_landmark, sigma_velocity)
    return src.perturb(y, v)


class NoiseSource:
    """Seeded Gaussian noise stream for measurements and velocity readings."""

    def __init__(self, seed: int, sigma_landmark: float, sigma_velocity: float):
        if sigma_landmark < 0 or sigma_velocity < 0:
            raise ValueError("noise standard deviations must be non-negative")
        self.seed = int(seed)
        self.sigma_landmark = float(sigma_landmark)
        self.sigma_velocity = float(sigma_velocity)
        self._rng = np.random.default_rng(self.seed)

    def landmark(self, y: np.ndarray) -> np.ndarray:
        if self.sigma_landmark == 0.0:
            return np.array(y, dtype=float)
        return y + self.sigma_landmark * self._rng.standard_normal(len(y))

    def velocity(self, v: np.ndarray) -> np.ndarray:
        if self.sigma_velocity == 0.0:
            return np.array(v, dtype=float)
        return v + self.sigma_velocity * self._rng.standard_normal(len(v))

    def perturb(self, y, v: VelocityInput):
        y_noisy = self.landmark(np.asarray(y, dtype=float))
        return y_noisy, VelocityInput(v.omega, self.velocity(v.v))
