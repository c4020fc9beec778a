import logging
import math

import numpy as np
import pytest

from obslab.landmarks import LandmarkSet, build_output_matrix
from obslab.profiles import Profile
from obslab.riccati import (
    GainState,
    InsufficientExcitation,
    NumericalBlowUp,
    excitation_constants,
    gain_apply,
    gramian,
    riccati_rhs,
    rk4_riccati,
    step_riccati,
)
from obslab.se2 import GENERATOR, VelocityInput, transition

SIGMA = 0.5 * np.eye(6)


@pytest.fixture
def c(landmarks3):
    return build_output_matrix(landmarks3)


def closed_form_p(p0, q, eps, t):
    """For scalar Sigma, Q = C^T Sigma C commutes with the rotations and P ignores w."""
    return math.exp(-eps * t) * p0 + (1 - math.exp(-eps * t)) * q / eps


def test_rhs_matches_definition(rng):
    a = rng.normal(size=(6, 6))
    p = a @ a.T
    q = np.eye(6)
    w = 0.7
    am = w * GENERATOR
    expected = -0.6 * p - am.T @ p - p @ am + q
    assert np.allclose(riccati_rhs(p, w, q, 0.6), expected, atol=1e-13)


def test_rk4_against_closed_form(c):
    q = c.T @ SIGMA @ c
    prof = Profile.sinusoid(2.0, 0.04 * math.pi)
    p0 = 0.5 * np.eye(6)
    p = p0.copy()
    dt = 1e-3
    for k in range(5000):
        t = k * dt
        p = rk4_riccati(p, dt, (prof(t), prof(t + dt / 2), prof(t + dt)), q, 0.6)
    assert np.abs(p - closed_form_p(p0, q, 0.6, 5.0)).max() < 1e-10
    assert np.array_equal(p, p.T)


def test_rk4_general_sigma_against_rotating_frame(c, rng):
    # non-scalar Sigma and constant w: variation of constants with exp(-A^T s) = Phi(s, 0)
    sig = np.diag(rng.uniform(0.2, 1.0, 6))
    q = c.T @ sig @ c
    w = 0.9
    p0 = np.eye(6)
    dt, n = 1e-3, 2000
    p = p0.copy()
    for _ in range(n):
        p = rk4_riccati(p, dt, (w, w, w), q, 0.4)
    # P(t) = e^{-eps t} Phi P0 Phi^T + int_0^t e^{-eps s} Phi(s) Q Phi(s)^T ds
    t = n * dt
    taus = np.linspace(0, t, 4001)
    acc = np.zeros((6, 6))
    for k, s in enumerate(taus):
        ph = transition(w * s).matrix()
        wgt = (taus[1] - taus[0]) * (0.5 if k in (0, len(taus) - 1) else 1.0)
        acc += wgt * math.exp(-0.4 * s) * ph @ q @ ph.T
    ph = transition(w * t).matrix()
    ref = math.exp(-0.4 * t) * ph @ p0 @ ph.T + acc
    assert np.abs(p - ref).max() < 1e-5


def test_step_riccati_and_validation(c):
    state = GainState(0.5 * np.eye(6), 0.6, SIGMA)
    nxt = step_riccati(state, VelocityInput(0.3, np.zeros(2)), c, 0.01)
    assert nxt.epsilon == 0.6 and nxt.p.shape == (6, 6)
    with pytest.raises(ValueError):
        GainState(np.eye(6), 0.0, SIGMA)
    with pytest.raises(ValueError):
        step_riccati(state, VelocityInput(0.3, np.zeros(2)), c, 0.0)


@pytest.mark.filterwarnings("ignore:invalid value encountered:RuntimeWarning")
def test_blowup_is_detected():
    with pytest.raises(NumericalBlowUp):
        rk4_riccati(np.full((6, 6), np.inf), 0.01, (0.0, 0.0, 0.0), np.eye(6), 0.6)


def test_gain_apply(rng, caplog):
    a = rng.normal(size=(6, 6))
    p = a @ a.T + np.eye(6)
    b = rng.normal(size=6)
    assert np.allclose(gain_apply(p, b), np.linalg.solve(p, b), atol=1e-12)
    indefinite = np.diag([1.0, 1.0, 1.0, 1.0, 1.0, -1.0])
    with caplog.at_level(logging.WARNING):
        x = gain_apply(indefinite, b)
    assert "pseudo-inverse" in caplog.text
    assert np.allclose(x, np.linalg.pinv(indefinite) @ b)


def test_gramian_scalar_sigma_is_window_times_q(c):
    prof = Profile.sinusoid(2.0, 0.04 * math.pi)
    g = gramian(c, SIGMA, prof, 3.0, 2.0, 1e-3)
    assert np.allclose(g, 2.0 * c.T @ SIGMA @ c, atol=1e-10)


def test_excitation_constants(c):
    prof = Profile.sinusoid(2.0, 0.04 * math.pi)
    exc = excitation_constants(c, SIGMA, 0.6, prof, horizon=5.0, dt=1e-2)
    csc_min = np.linalg.eigvalsh(c.T @ SIGMA @ c)[0]
    assert exc.t_window == pytest.approx(1e-2)
    assert exc.beta1 == pytest.approx(2 * exc.t_window * math.exp(-0.6 * exc.t_window) * csc_min)
    assert exc.gramian_min_eig >= exc.alpha * (1 - 1e-9)
    q = c.T @ SIGMA @ c
    assert exc.beta2 >= 0.5
    assert exc.beta2 <= np.linalg.eigvalsh(q)[-1] / 0.6 + 1e-9


def test_collinear_landmarks_lack_excitation():
    c = build_output_matrix(LandmarkSet(((0.0, 0.0), (1.0, 1.0), (2.0, 2.0))))
    with pytest.raises(InsufficientExcitation):
        excitation_constants(c, SIGMA, 0.6, Profile.constant(0.1), horizon=0.05, dt=1e-2)
