import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from obslab.landmarks import build_output_matrix
from obslab.margins import (
    INV_E,
    MINUS_ONE,
    PRINCIPAL,
    InfeasibleMargin,
    MarginInputs,
    compute_dmax,
    compute_gamma,
    default_kappa1,
    dmax_bisection,
    epsilon_interval,
    gain_margin_residual,
    lambert_w,
    margin_report,
    select_window,
    theorem1_constants,
    theorem2_envelope,
    upsilon2,
)

SIGMA = 0.5 * np.eye(6)


@pytest.fixture
def c(landmarks3):
    return build_output_matrix(landmarks3)


# frozen reference values of W
@pytest.mark.parametrize(
    "z, branch, w",
    [
        (1.0, PRINCIPAL, 0.5671432904097838),
        (-0.1, PRINCIPAL, -0.11183255915896297),
        (-0.1, MINUS_ONE, -3.577152063957297),
        (0.0, PRINCIPAL, 0.0),
        (-INV_E, PRINCIPAL, -1.0),
        (-INV_E, MINUS_ONE, -1.0),
    ],
)
def test_lambert_w_frozen_values(z, branch, w):
    assert lambert_w(z, branch) == pytest.approx(w, abs=1e-7 if z == -INV_E else 1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-INV_E + 1e-12, max_value=1e6))
def test_lambert_w_inverts(z):
    w = lambert_w(z)
    assert w >= -1.0
    assert w * math.exp(w) == pytest.approx(z, rel=1e-12, abs=1e-15)
    if z < -1e-300:
        wm = lambert_w(z, MINUS_ONE)
        assert wm <= -1.0
        assert wm * math.exp(wm) == pytest.approx(z, rel=1e-10, abs=1e-15)


def test_lambert_w_domain():
    with pytest.raises(ValueError):
        lambert_w(-0.5)
    with pytest.raises(ValueError):
        lambert_w(0.1, MINUS_ONE)
    with pytest.raises(ValueError):
        lambert_w(math.nan)


def test_gamma_matches_adaptive_quadrature():
    amp, freq, d = 0.4, 0.04 * math.pi, 1.0

    def w(t):
        return amp * np.sin(freq * t)

    got = compute_gamma(w, d, 60.0, 0.001)
    ts = np.linspace(0.0, 60.0, 6001)
    ref = max(integrate.quad(lambda x: (w(t + x - d) - w(t)) ** 2, 0.0, d)[0] for t in ts)
    assert got == pytest.approx(ref, rel=1e-4)
    assert compute_gamma(lambda t: np.full_like(t, 0.2), d, 10.0, 0.01) == 0.0


def _feasible_inputs(c, delay=1.0, gamma=1e-5, kappa2=None, eps=1.0):
    return MarginInputs(c, SIGMA, gamma=gamma, t_window=1.0 / eps, delay=delay, epsilon=eps,
                        kappa1=0.01, kappa2=kappa2)


def test_dmax_matches_the_limit_of_the_lyapunov_condition(c):
    # delta1 > 0 exactly for D < D_max when kappa2 -> 1/(1 + D) and eps T = 1
    d_max = compute_dmax(_feasible_inputs(c))
    assert 0 < d_max < math.inf
    eta = 1e-9
    for d, sign in ((d_max * (1 - 1e-4), 1), (d_max * (1 + 1e-4), -1)):
        inp = _feasible_inputs(c, delay=d, kappa2=(1 - eta) / (1 + d))
        assert sign * theorem1_constants(inp).delta1 > 0


def test_dmax_closed_form_agrees_with_bisection():
    for u in (6.0, 24.0, 60.0, 1e4):
        d = dmax_bisection(u)
        assert d * (d + 1) * (d + 2) == pytest.approx(u, rel=1e-12)
    assert dmax_bisection(6.0) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(InfeasibleMargin):
        dmax_bisection(-1.0)


def test_dmax_is_monotone_in_gamma(c):
    gammas = [1e-7, 1e-6, 1e-5, 1e-4]
    d = [compute_dmax(_feasible_inputs(c, gamma=g)) for g in gammas]
    assert all(a > b for a, b in zip(d, d[1:]))
    assert compute_dmax(_feasible_inputs(c, gamma=0.0)) == math.inf


def test_epsilon_interval_brackets_positive_residual(c):
    inp = _feasible_inputs(c, delay=0.5)
    u2 = upsilon2(inp)
    assert 0 < u2 < INV_E
    lo, hi = epsilon_interval(inp)
    t = inp.t_window
    assert gain_margin_residual(lo, t, u2) == pytest.approx(0.0, abs=1e-12)
    assert gain_margin_residual(hi, t, u2) == pytest.approx(0.0, abs=1e-12)
    for e in np.geomspace(lo * 1.01, hi * 0.99, 7):
        assert gain_margin_residual(e, t, u2) > 0
    assert gain_margin_residual(lo * 0.9, t, u2) < 0
    assert gain_margin_residual(hi * 1.1, t, u2) < 0


def test_infeasible_reference_constants(c):
    inp = MarginInputs(c, SIGMA, gamma=8.4e-4, t_window=1 / 0.6, delay=1.0, epsilon=0.6, kappa1=1.0)
    with pytest.raises(InfeasibleMargin):
        epsilon_interval(inp)
    with pytest.raises(InfeasibleMargin):
        compute_dmax(inp)
    rep = margin_report(inp, beta2=1.0)
    assert not rep.feasible and math.isnan(rep.d_max)
    assert rep.notes


def test_envelope_and_window(c):
    inp = MarginInputs(c, SIGMA, gamma=0.0, t_window=select_window(0.001, 0.6), delay=1.0, epsilon=0.6,
                       kappa1=0.001)
    assert inp.t_window == pytest.approx(1 / 0.6)
    assert select_window(5.0, 0.6) == 5.0
    env = theorem2_envelope(inp, beta2=1.0)
    t1 = theorem1_constants(inp)
    assert t1.feasible and env.mu == pytest.approx(t1.mu) and env.overshoot >= 1.0
    lit = theorem2_envelope(inp, beta2=1.0, literal_min=True)
    assert lit.overshoot <= env.overshoot


def test_default_kappa1_minimizes_the_gain_condition(c):
    k = default_kappa1(c, SIGMA, 1e-3, 1.0)
    vals = [upsilon2(MarginInputs(c, SIGMA, 1e-3, 1.0, 1.0, 1.0, kappa1=kk)) for kk in (k / 1.05, k, k * 1.05)]
    assert vals[1] <= min(vals[0], vals[2])
