"""Acceptance criteria, one test (and one PASS/FAIL line) per criterion.

Every tolerance used below is pinned in the constants block so the printed
lines and the assertions cannot drift apart.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.linalg import expm

from conftest import record_acceptance
from obslab.cli import main
from obslab.config import dump_config, load_config
from obslab.margins import (
    INV_E,
    MINUS_ONE,
    PRINCIPAL,
    MarginInputs,
    analyze,
    compute_dmax,
    lambert_w,
    select_window,
)
from obslab.profiles import Profile, SineTerm
from obslab.se2 import GENERATOR, transition
from obslab.sim import (
    BOUNDED_NOISE,
    CONVERGED,
    DIVERGED,
    PREDICTIVE,
    STANDARD,
    noise_study,
    reference_scenario,
    run,
)

# pinned tolerances
PHI_TOL = 1e-10
PHI_NORM_TOL = 1e-12
PHI_CASES = 1000
PHI_RUNTIME_S = 5.0
W_RESID_TOL = 1e-12
W_SAMPLES = 10_000
W_BRANCH_TOL = 1e-8
ZERO_DELAY_TOL = 1e-9
PDE_FACTOR = 5.0
PDE_REFINE_RATIO = 0.6  # "halves" with first-order slack
FIG4_TOL = 1e-2
FIG4_RUNTIME_S = 30.0
THRESHOLD_FACTOR = 2.0
GAIN_BOUND_FACTOR = 0.95
SYM_TOL = 1e-12
ENVELOPE_SLACK = 1.10
SLOPE_SLACK = 0.80  # slope <= -(1 - 0.2) mu / 2
SLOPE_FLOOR = 1e-11
DMAX_TARGET = 8.7
DMAX_REL = 0.15

SCENARIOS = __import__("pathlib").Path(__file__).resolve().parents[1] / "scenarios"


@pytest.fixture(scope="module")
def unit_delay_run():
    sc = reference_scenario()
    start = time.perf_counter()
    recs = run(sc, PREDICTIVE)
    return sc, recs[PREDICTIVE], time.perf_counter() - start


# ---------------------------------------------------------------- 1


def _random_profile(rng):
    terms = tuple(
        SineTerm(rng.uniform(-2, 2), rng.uniform(0.01, 3.0), rng.uniform(-math.pi, math.pi))
        for _ in range(rng.integers(1, 4))
    )
    return Profile(rng.uniform(-2, 2), terms)


def test_c01_transition_matrix_properties():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    eye = np.eye(6)
    worst = 0.0
    worst_norm = 0.0
    h = 1e-3
    for _ in range(PHI_CASES):
        prof = _random_profile(rng)
        t, t0, s = rng.uniform(-50, 50, size=3)

        def phi(a, b):
            return transition(prof.integral(a) - prof.integral(b)).matrix()

        p = phi(t, t0)
        a_t = prof(t) * GENERATOR

        # five-point stencil for d/dt, one Richardson step on top
        def stencil(k):
            return (-phi(t + 2 * k, t0) + 8 * phi(t + k, t0) - 8 * phi(t - k, t0) + phi(t - 2 * k, t0)) / (12 * k)

        d_h, d_h2 = stencil(h), stencil(h / 2)
        d = d_h2 + (d_h2 - d_h) / 15.0
        errs = [
            np.abs(phi(t0, t0) - eye).max(),
            np.abs(phi(t, s) @ phi(s, t0) - p).max(),
            np.abs(d - a_t @ p).max(),
            np.abs(np.linalg.inv(p) - p.T).max(),
            np.abs(p.T - phi(t0, t)).max(),
            np.abs(p @ a_t - a_t @ p).max(),
            # exp of the integrated generator
            np.abs(expm((prof.integral(t) - prof.integral(t0)) * GENERATOR) - p).max(),
        ]
        worst = max(worst, *errs)
        worst_norm = max(worst_norm, abs(np.linalg.norm(p, 2) - 1.0))
    elapsed = time.perf_counter() - start
    ok = worst < PHI_TOL and worst_norm < PHI_NORM_TOL and elapsed < PHI_RUNTIME_S
    record_acceptance("C01", ok, f"max property error {worst:.2e} (<{PHI_TOL:g}), "
                      f"| |Phi|_2 - 1 | {worst_norm:.2e} (<{PHI_NORM_TOL:g}), {elapsed:.2f} s (<{PHI_RUNTIME_S:g} s)")
    assert ok


# ---------------------------------------------------------------- 2


def test_c02_lambert_w():
    rng = np.random.default_rng(7)
    z0 = np.concatenate([rng.uniform(-INV_E, 10.0, W_SAMPLES - 100), -INV_E + np.geomspace(1e-16, 1e-2, 100)])
    zm = np.concatenate([rng.uniform(-INV_E, 0.0, W_SAMPLES - 200), -INV_E + np.geomspace(1e-16, 1e-2, 100),
                         -np.geomspace(1e-300, 1e-3, 100)])
    r0 = max(abs(w * math.exp(w) - z) for z in z0 for w in (lambert_w(z, PRINCIPAL),))
    rm = max(abs(w * math.exp(w) - z) for z in zm for w in (lambert_w(z, MINUS_ONE),))
    b0 = abs(lambert_w(-INV_E, PRINCIPAL) + 1.0)
    bm = abs(lambert_w(-INV_E, MINUS_ONE) + 1.0)
    ok = r0 < W_RESID_TOL and rm < W_RESID_TOL and b0 < W_BRANCH_TOL and bm < W_BRANCH_TOL
    record_acceptance("C02", ok, f"residual W0 {r0:.1e}, W-1 {rm:.1e} (<{W_RESID_TOL:g}, {W_SAMPLES} samples each); "
                      f"branch point |W+1| {b0:.1e}, {bm:.1e} (<{W_BRANCH_TOL:g})")
    assert ok


# ---------------------------------------------------------------- 3


def test_c03_zero_delay_equivalence():
    recs = run(reference_scenario(delay=0.0), "both")
    diff = float(np.abs(recs[PREDICTIVE].x_hat - recs[STANDARD].x_hat).max())
    ok = diff < ZERO_DELAY_TOL and recs[PREDICTIVE].t[-1] == pytest.approx(100.0)
    record_acceptance("C03", ok, f"max |X_hat_pred - X_hat_std| over 100 s = {diff:.1e} (<{ZERO_DELAY_TOL:g})")
    assert ok


# ---------------------------------------------------------------- 4


def test_c04_ode_pde_equivalence():
    sc = reference_scenario(pde_cells=200, dt=1e-3)
    rec = run(sc, PREDICTIVE, pde_validate=True)[PREDICTIVE]
    gap = float(np.max(rec.pde_gap))
    y = rec.x @ sc.c.T
    scale = float(np.abs(y).max())
    dx = sc.delay / sc.pde_cells
    bound = PDE_FACTOR * (sc.dt + dx) * scale
    fine = replace(sc, dt=sc.dt / 2, pde_cells=sc.pde_cells * 2)
    gap_fine = float(np.max(run(fine, PREDICTIVE, pde_validate=True)[PREDICTIVE].pde_gap))
    ratio = gap_fine / gap
    ok = gap <= bound and ratio <= PDE_REFINE_RATIO
    record_acceptance("C04", ok, f"max gap {gap:.4f} <= 5 (dt + dx) scale = {bound:.4f} (scale {scale:.3f}); "
                      f"m = 400, dt = 5e-4 gap {gap_fine:.4f}, ratio {ratio:.3f} (<= {PDE_REFINE_RATIO})")
    assert ok


# ---------------------------------------------------------------- 5


def test_c05_unit_delay_verdict(unit_delay_run):
    sc, rec, elapsed = unit_delay_run
    last10 = float(rec.x_tilde_norm[rec.t >= sc.t_end - 10.0].max())
    ok = rec.verdict == CONVERGED and last10 < FIG4_TOL and elapsed < FIG4_RUNTIME_S
    record_acceptance("C05", ok, f"D = 1, eps = 0.6: verdict {rec.verdict}, max |X_tilde| over last 10 s "
                      f"{last10:.2e} (<{FIG4_TOL:g}), runtime {elapsed:.1f} s (<{FIG4_RUNTIME_S:g} s)")
    assert ok


# ---------------------------------------------------------------- 6

SWEEP_HORIZON_S = 200.0
SWEEP_EPS = (0.2, 0.4, 0.6, 0.8, 1.2, 1.6, 2.1, 3.0, 5.0, 8.0, 12.0, 16.0, 23.0, 32.0, 50.0)
REPORTED_THRESHOLDS = {1.1: 0.2, 1.2: 1.6, 1.3: 2.1, 1.4: 5.0, 1.5: 23.0}
NAMED_POINTS = ((1.2, 1.6), (1.3, 2.1), (1.4, 5.0), (1.5, 23.0))


class _SweepCache:
    """Predictive runs at the sweep horizon, computed on first use."""

    def __init__(self):
        self.base = reference_scenario(t_end=SWEEP_HORIZON_S)
        self.cells = {}

    def verdict(self, d, eps):
        if (d, eps) not in self.cells:
            rec = run(replace(self.base, delay=d, epsilon=eps), PREDICTIVE)[PREDICTIVE]
            self.cells[(d, eps)] = (rec.verdict, rec.tail_max)
        return self.cells[(d, eps)]

    def threshold(self, d):
        # ascending scan; the first converged gain is the grid minimum
        for eps in SWEEP_EPS:
            if self.verdict(d, eps)[0] == CONVERGED:
                return eps
        return None


@pytest.fixture(scope="module")
def sweep_cache():
    return _SweepCache()


def test_c06a_standard_diverges_at_1_2():
    sc = reference_scenario(delay=1.2, epsilon=0.6, t_end=SWEEP_HORIZON_S)
    rec = run(sc, STANDARD)[STANDARD]
    ok = rec.verdict == DIVERGED
    record_acceptance("C06a", ok, f"standard observer, D = 1.2, eps = 0.6: {rec.verdict} at t = {rec.diverged_at}")
    assert ok


@pytest.mark.xfail(strict=True, reason="three of the four points need a larger gain than reported; see the ledger")
def test_c06b_named_points_converge(sweep_cache):
    res = {p: sweep_cache.verdict(*p) for p in NAMED_POINTS}
    ok = all(v == CONVERGED for v, _ in res.values())
    record_acceptance("C06b", ok, f"{SWEEP_HORIZON_S:g} s runs: " + "; ".join(
        f"(D={d:g}, eps={e:g}) {v}, tail {tail:.2e}" for (d, e), (v, tail) in res.items()))
    assert ok


def test_c06c_no_convergence_at_1_6(sweep_cache):
    res = {e: sweep_cache.verdict(1.6, e) for e in SWEEP_EPS}
    ok = all(v != CONVERGED for v, _ in res.values())
    counts = {v: sum(1 for w, _ in res.values() if w == v) for v in sorted({w for w, _ in res.values()})}
    record_acceptance("C06c", ok, f"D = 1.6, {len(SWEEP_EPS)} gains in [0.2, 50], {SWEEP_HORIZON_S:g} s runs: "
                      + ", ".join(f"{n} {v}" for v, n in counts.items()))
    assert ok


def test_c06d_thresholds_within_factor_two(sweep_cache):
    found = {d: sweep_cache.threshold(d) for d in REPORTED_THRESHOLDS}
    ratios = {d: (math.inf if e is None else e / REPORTED_THRESHOLDS[d]) for d, e in found.items()}
    ok = all(1.0 / THRESHOLD_FACTOR <= r <= THRESHOLD_FACTOR for r in ratios.values())
    record_acceptance("C06d", ok, f"{SWEEP_HORIZON_S:g} s runs: " + ", ".join(
        f"D={d:g}: {found[d]} vs {REPORTED_THRESHOLDS[d]:g} (x{ratios[d]:.2f})" for d in REPORTED_THRESHOLDS))
    assert ok


# ---------------------------------------------------------------- 7


def test_c07_gain_lower_bound(unit_delay_run):
    sc, rec, _ = unit_delay_run
    t_win = select_window(sc.dt, sc.epsilon)
    inputs = MarginInputs(sc.c, sc.sigma, 0.0, t_win, sc.delay, sc.epsilon)
    beta1 = inputs.beta1()
    after = rec.t > t_win
    lmin = float(rec.lambda_min_p[after].min())
    ok = lmin >= GAIN_BOUND_FACTOR * beta1 and rec.p_asymmetry <= SYM_TOL
    record_acceptance("C07", ok, f"min lambda_min(P) for t > T={t_win:.4g} s is {lmin:.4f} >= 0.95 beta1 = "
                      f"{GAIN_BOUND_FACTOR * beta1:.4f}; max |P - P^T| {rec.p_asymmetry:.1e} (<={SYM_TOL:g})")
    assert ok


# ---------------------------------------------------------------- 8

ENVELOPE_CASES = [(d, e) for d in (0.5, 1.0, 2.0) for e in (0.6, 1.0, 2.0)]


def _tail_window(rec, tol):
    below = np.nonzero(rec.x_tilde_norm < tol)[0]
    start = rec.t[below[0]]
    floor = np.nonzero(rec.x_tilde_norm < SLOPE_FLOOR)[0]
    stop = rec.t[floor[0]] if len(floor) else rec.t[-1]
    return start, stop


def test_c08_envelope_on_converged_runs():
    worst_ratio = 0.0
    worst_slope = -math.inf
    checked = 0
    details = []
    for d, eps in ENVELOPE_CASES:
        sc = reference_scenario(omega_profile=Profile.constant(0.2), delay=d, epsilon=eps, t_end=20.0)
        rec = run(sc, PREDICTIVE, pde_validate=True)[PREDICTIVE]
        if rec.verdict != CONVERGED:
            continue
        rep = analyze(sc.c, sc.sigma, eps, d, sc.omega_profile, sc.dt, sc.t_end, p0=sc.p0)
        assert rep.feasible
        env = rep.overshoot * np.exp(-rep.mu * rec.t / 2.0) * rec.eq_norm[0]
        ratio = float((rec.eq_norm / env).max())
        start, stop = _tail_window(rec, sc.tol_conv)
        slope = rec.tail_slope(start, stop)
        limit = -SLOPE_SLACK * rep.mu / 2.0
        worst_ratio = max(worst_ratio, ratio)
        worst_slope = max(worst_slope, slope / limit)
        details.append(f"D={d:g},eps={eps:g}: slope {slope:.3f} vs {limit:.3f}")
        checked += 1
    ok = checked == len(ENVELOPE_CASES) and worst_ratio <= ENVELOPE_SLACK and worst_slope >= 1.0
    record_acceptance("C08", ok, f"{checked}/{len(ENVELOPE_CASES)} constant-turn runs converged; "
                      f"max Eq-norm / envelope {worst_ratio:.2e} (<={ENVELOPE_SLACK}); "
                      f"min slope/limit {worst_slope:.2f} (>=1); " + "; ".join(details))
    assert ok


# ---------------------------------------------------------------- 9


def test_c09b_dmax_monotone_in_gamma():
    sc = reference_scenario()
    eps = 1.0
    vals = [compute_dmax(MarginInputs(sc.c, sc.sigma, g, 1.0 / eps, 1.0, eps, kappa1=0.01))
            for g in (1e-6, 1e-5, 1e-4)]
    ok = vals[0] > vals[1] > vals[2]
    record_acceptance("C09b", ok, "D_max at gamma = 1e-6, 1e-5, 1e-4: " + ", ".join(f"{v:.4f}" for v in vals))
    assert ok


@pytest.mark.xfail(strict=True, reason="the margin conditions are infeasible for this profile; see the ledger")
def test_c09a_dmax_reproduction(tmp_path):
    code = main(["margin", str(SCENARIOS / "noise_study.cfg"), "--out", str(tmp_path)])
    from obslab.report import parse_margin_text

    vals = parse_margin_text((tmp_path / "margin.txt").read_text())
    d_max = float(vals["d_max"])
    ok = code == 0 and abs(d_max - DMAX_TARGET) <= DMAX_REL * DMAX_TARGET
    record_acceptance("C09a", ok, f"D_max = {vals['d_max']} (target {DMAX_TARGET} +/- {DMAX_REL:.0%}); "
                      f"gamma {float(vals['gamma']):.3e}, upsilon1 {float(vals['upsilon1']):.3e}, "
                      f"exit code {code}")
    assert ok


# ---------------------------------------------------------------- 10


def test_c10_noise_study():
    base, _ = load_config(SCENARIOS / "noise_study.cfg")
    study = noise_study(base, delays=(0.5, 1.0, 1.4))
    verdicts = {d: sorted({r.verdict for r in recs}) for d, recs in study.records.items()}
    ok = all(v == [BOUNDED_NOISE] for v in verdicts.values()) and study.band_monotone
    record_acceptance("C10", ok, f"eps = {base.epsilon:g}, seeds {study.seeds}; mean bands "
                      + ", ".join(f"D={d:g}: {b:.4f} ({'/'.join(verdicts[d])})" for d, b in study.bands.items())
                      + f"; monotone {study.band_monotone}")
    assert ok


# ---------------------------------------------------------------- 11


def test_c11_determinism_golden(tmp_path):
    golden = (SCENARIOS.parent / "tests" / "golden" / "short_noisy_run.csv").read_bytes()
    base, _ = load_config(SCENARIOS / "noise_study.cfg")
    sc = replace(base, t_end=5.0, dt=0.005, record_every=0.1)
    cfg = tmp_path / "short_noisy_run.cfg"
    cfg.write_text(dump_config(sc))
    outs = []
    for d in ("a", "b"):
        main(["run", str(cfg), "--observer", "both", "--out", str(tmp_path / d)])
        outs.append((tmp_path / d / "run.csv").read_bytes())
    ok = outs[0] == outs[1] == golden
    record_acceptance("C11", ok, f"two runs byte-identical: {outs[0] == outs[1]}; match golden file: {outs[0] == golden}")
    assert ok
