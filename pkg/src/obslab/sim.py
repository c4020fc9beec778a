"""Scenario runner: truth kinematics, delayed measurements and observers in lockstep."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .history import LITERAL, PHI_WINDOWS, TIME_TOL, DelayLine, lag_angles_from_samples
from .landmarks import NOISE_GENERATOR, LandmarkSet, NoiseSource, build_output_matrix, observability_check
from .observers import PredictiveObserver, StandardObserver
from .pde import OdePdeObserver, error_norm
from .profiles import Profile
from .riccati import NumericalBlowUp
from .se2 import STATE_DIM, project_so2, rk4_state_step

log = logging.getLogger(__name__)

PREDICTIVE = "predictive"
STANDARD = "standard"
BOTH = "both"

CONVERGED = "converged"
DIVERGED = "diverged"
BOUNDED_NOISE = "bounded_noise"

DEFAULT_LANDMARKS = ((1.0, 3.0), (3.0, 1.0), (4.0, 4.0))
_R2 = math.sqrt(2.0)
DEFAULT_X0 = (-5.0 / _R2, 1.0 / _R2, _R2 / 2, _R2 / 2, -_R2 / 2, _R2 / 2)


@dataclass(frozen=True)
class NoiseConfig:
    sigma_landmark: float
    sigma_velocity: float
    seed: int = 0


@dataclass(frozen=True)
class Scenario:
    landmarks: LandmarkSet
    omega_profile: Profile
    vx_profile: Profile
    vy_profile: Profile = Profile.constant(0.0)
    x0: tuple = DEFAULT_X0
    x_hat0: tuple = (0.0,) * STATE_DIM
    delay: float = 1.0
    dt: float = 1e-3
    t_end: float = 100.0
    epsilon: float = 0.6
    sigma_scale: float = 0.5
    p0_scale: float = 0.5
    noise: NoiseConfig | None = None
    phi_window: str = LITERAL
    tol_conv: float = 1e-2
    divergence_factor: float = 10.0
    record_every: float = 0.01
    pde_cells: int = 200

    def validate(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.delay < 0:
            raise ValueError("delay must be non-negative")
        if self.delay > 0 and self.dt > self.delay / 100.0 * (1 + 1e-9):
            raise ValueError("dt must not exceed D/100")
        n = round(self.delay / self.dt)
        if abs(n * self.dt - self.delay) > TIME_TOL:
            raise ValueError("delay must be a multiple of dt")
        if self.t_end <= self.delay:
            raise ValueError("t_end must exceed the delay")
        if self.phi_window not in PHI_WINDOWS:
            raise ValueError(f"phi_window must be one of {PHI_WINDOWS}")
        if len(self.x0) != STATE_DIM or len(self.x_hat0) != STATE_DIM:
            raise ValueError("initial states must have 6 entries")
        return self

    @property
    def c(self) -> np.ndarray:
        return build_output_matrix(self.landmarks)

    @property
    def sigma(self) -> np.ndarray:
        return self.sigma_scale * np.eye(2 * len(self.landmarks))

    @property
    def p0(self) -> np.ndarray:
        return self.p0_scale * np.eye(STATE_DIM)


def reference_scenario(**overrides) -> Scenario:
    """Wheeled-robot example: three landmarks, w = 2 sin(0.04 pi t), v_x = 1 m/s."""
    base = Scenario(
        landmarks=LandmarkSet(DEFAULT_LANDMARKS),
        omega_profile=Profile.sinusoid(2.0, 0.04 * math.pi),
        vx_profile=Profile.constant(1.0),
    )
    return replace(base, **overrides)


@dataclass
class RunRecord:
    observer: str
    t: np.ndarray
    x_tilde_norm: np.ndarray
    y_tilde_norm: np.ndarray
    lambda_min_p: np.ndarray
    lambda_max_p: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    verdict: str
    x_tilde0: float
    tail_max: float
    band: float
    final_error: float
    diverged_at: float | None = None
    eq_norm: np.ndarray | None = None
    pde_gap: np.ndarray | None = None
    p_asymmetry: float = 0.0
    warnings: list = field(default_factory=list)

    def tail_slope(self, start: float, stop: float | None = None) -> float:
        """Least-squares slope of log |X_tilde| against t over ``[start, stop]``."""
        stop = self.t[-1] if stop is None else stop
        sel = (self.t >= start) & (self.t <= stop) & (self.x_tilde_norm > 0)
        if sel.sum() < 2:
            return math.nan
        return float(np.polyfit(self.t[sel], np.log(self.x_tilde_norm[sel]), 1)[0])


def classify(err_tail_max, diverged, tol_conv):
    if diverged:
        return DIVERGED
    return CONVERGED if err_tail_max < tol_conv else BOUNDED_NOISE


class _Track:
    """Per-observer bookkeeping inside the run loop."""

    def __init__(self, name, obs, n_rec, n_nodes=None):
        self.name = name
        self.obs = obs
        self.active = True
        self.diverged_at = None
        self.err0 = None
        self.tail_max = 0.0
        self.band = 0.0
        self.rows = 0
        self.t = np.empty(n_rec)
        self.xt = np.empty(n_rec)
        self.yt = np.empty(n_rec)
        self.lmin = np.empty(n_rec)
        self.lmax = np.empty(n_rec)
        self.x = np.empty((n_rec, STATE_DIM))
        self.xh = np.empty((n_rec, STATE_DIM))
        self.eq = np.empty(n_rec) if n_nodes else None
        self.gap = np.empty(n_rec) if n_nodes else None
        self.asym = 0.0
        self.pde = None


def _make_observer(kind, sc: Scenario, c, lag):
    common = dict(c=c, sigma=sc.sigma, epsilon=sc.epsilon, delay=sc.delay, dt=sc.dt,
                  x_hat0=np.array(sc.x_hat0, dtype=float), p0=sc.p0)
    if kind == PREDICTIVE:
        return PredictiveObserver(phi_window=sc.phi_window, lag_angles=lag, **common)
    if kind == STANDARD:
        return StandardObserver(**common)
    raise ValueError(f"unknown observer {kind!r}")


def _pde_observer(sc: Scenario, c, lag):
    m = sc.pde_cells
    dx = sc.delay / m
    nodes = np.arange(m + 1) * dx
    lag_t = np.arange(len(lag)) * sc.dt
    if sc.phi_window == LITERAL:
        node_ang = np.interp(nodes, lag_t, lag)
        inj = float(lag[-1])
        node_angles = lambda t: node_ang  # noqa: E731
        injection_angle = lambda t: inj  # noqa: E731
    else:
        prof = sc.omega_profile
        node_angles = lambda t: prof.integral(t + nodes) - prof.integral(t)  # noqa: E731
        injection_angle = lambda t: float(prof.integral(t) - prof.integral(max(t - sc.delay, 0.0)))  # noqa: E731
    return OdePdeObserver(c, sc.sigma, sc.epsilon, sc.delay, sc.dt, m,
                          np.array(sc.x_hat0, dtype=float), node_angles, injection_angle, p0=sc.p0)


ENGINES = ("auto", "compiled", "reference")


def run(scenario: Scenario, which: str = PREDICTIVE, pde_validate: bool = False, engine: str = "auto"):
    """Simulate the scenario and return ``{observer name: RunRecord}``.

    Each step at grid time ``t``: push the truth state, read ``Y(t) = C X(t - D)``
    from the truth history (``X(0)`` before time zero), add noise, step the
    observers, record metrics, then advance the truth by RK4 with the rotation
    block re-projected onto SO(2).

    ``engine="reference"`` drives the observer classes one call per step;
    ``"compiled"`` runs the same protocol in :mod:`obslab.fastloop`. ``"auto"``
    picks the compiled loop unless the ODE-PDE co-simulation is requested.
    """
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}")
    if which not in (PREDICTIVE, STANDARD, BOTH):
        raise ValueError(f"unknown observer {which!r}")
    if engine == "compiled" and pde_validate:
        raise ValueError("the compiled engine does not co-simulate the ODE-PDE form")
    if engine == "compiled" or (engine == "auto" and not pde_validate):
        return _run_compiled(scenario, which)
    sc = scenario.validate()
    kinds = [PREDICTIVE, STANDARD] if which == BOTH else [which]
    c = sc.c
    obs_report = observability_check(sc.landmarks)
    warnings = [] if obs_report.ok else [
        f"observability: FAILED (rank {obs_report.rank} < 6, lmin(C^T C)={obs_report.min_eigenvalue:.3g})"
    ]
    for w in warnings:
        log.warning(w)

    dt, n = sc.dt, int(round(sc.t_end / sc.dt))
    nd = int(round(sc.delay / dt))
    k_grid = np.arange(n + 2)
    t_grid = k_grid * dt
    w_nodes = np.asarray(sc.omega_profile(t_grid), dtype=float) * np.ones(n + 2)
    w_mid = np.asarray(sc.omega_profile(t_grid + 0.5 * dt), dtype=float) * np.ones(n + 2)
    v_nodes = np.stack([sc.vx_profile(t_grid) * np.ones(n + 2), sc.vy_profile(t_grid) * np.ones(n + 2)], 1)
    v_mid = np.stack([sc.vx_profile(t_grid + 0.5 * dt) * np.ones(n + 2),
                      sc.vy_profile(t_grid + 0.5 * dt) * np.ones(n + 2)], 1)
    omega_int = lag_angles_from_samples(w_nodes, dt)
    lag = omega_int[: nd + 1]

    stride = max(1, int(round(sc.record_every / dt)))
    n_rec = n // stride + 1
    x = np.array(sc.x0, dtype=float)
    truth_line = DelayLine(sc.delay, dt, STATE_DIM, prefill=x)
    noise = None
    if sc.noise is not None:
        noise = NoiseSource(sc.noise.seed, sc.noise.sigma_landmark, sc.noise.sigma_velocity)

    tracks = []
    for kind in kinds:
        tr = _Track(kind, _make_observer(kind, sc, c, lag), n_rec, sc.pde_cells if pde_validate and kind == PREDICTIVE and nd > 0 else None)
        if tr.eq is not None:
            tr.pde = _pde_observer(sc, c, lag)
        tracks.append(tr)
    if pde_validate:
        dx = sc.delay / sc.pde_cells
        node_times = np.arange(sc.pde_cells + 1) * dx - sc.delay
        # nodes on the sample grid read straight from the window (prefill before t = 0)
        node_stride = nd // sc.pde_cells if nd % sc.pde_cells == 0 else 0

    tail_start = 0.9 * sc.t_end - TIME_TOL
    band_start = 0.8 * sc.t_end - TIME_TOL
    for k in range(n + 1):
        t = k * dt
        truth_line.push(t, x)
        y = c @ truth_line.query(t - sc.delay)
        omegas = (w_nodes[k], w_mid[k], w_nodes[k + 1])
        vs = (v_nodes[k], v_mid[k], v_nodes[k + 1])
        if noise is not None:
            y = noise.landmark(y)
            dv = noise.velocity(np.zeros(2))
            vs_obs = (vs[0] + dv, vs[1] + dv, vs[2] + dv)
        else:
            vs_obs = vs
        record = k % stride == 0
        for tr in tracks:
            if not tr.active:
                continue
            obs = tr.obs
            x_hat_t = obs.x_hat
            err = float(np.linalg.norm(x - x_hat_t))
            if tr.err0 is None:
                tr.err0 = err
            if record and tr.eq is not None:
                if node_stride:
                    truth_nodes = truth_line.window(nd + 1)[::node_stride] @ c.T
                else:
                    truth_nodes = np.array([truth_line.query(t + s) for s in node_times]) @ c.T
                x_t_pde = x - tr.pde.x_hat
                tr.eq[tr.rows] = error_norm(truth_nodes, tr.pde.grid.u_hat, x_t_pde, dx)
            try:
                if tr.name == PREDICTIVE:
                    obs.step(y, omegas, vs_obs, t, dt, omega_integral=omega_int[k])
                else:
                    obs.step(y, omegas, vs_obs, t, dt)
                if tr.pde is not None:
                    pde_out = tr.pde.output()
                    tr.pde.step(y, omegas, vs_obs, t, dt)
            except NumericalBlowUp as exc:
                tr.active = False
                tr.diverged_at = t
                log.info("%s observer blew up at t=%.3f: %s", tr.name, t, exc)
                continue
            if t >= tail_start:
                tr.tail_max = max(tr.tail_max, err)
            if t >= band_start:
                tr.band = max(tr.band, err)
            if record:
                i = tr.rows
                tr.t[i] = t
                tr.xt[i] = err
                tr.yt[i] = float(np.linalg.norm(y - obs.y_hat))
                eig = np.linalg.eigvalsh(obs.p)
                tr.lmin[i], tr.lmax[i] = eig[0], eig[-1]
                tr.asym = max(tr.asym, float(np.abs(obs.p - obs.p.T).max()))
                tr.x[i] = x
                tr.xh[i] = x_hat_t
                if tr.gap is not None:
                    tr.gap[i] = float(np.abs(pde_out - obs.y_hat).max())
                tr.rows += 1
            if not math.isfinite(err) or err > sc.divergence_factor * max(tr.err0, TIME_TOL):
                tr.active = False
                tr.diverged_at = t
        if not any(tr.active for tr in tracks):
            break
        x = rk4_state_step(x, dt, omegas, vs)
        r = project_so2(np.column_stack([x[2:4], x[4:6]]))
        x[2:4], x[4:6] = r[:, 0], r[:, 1]

    out = {}
    for tr in tracks:
        m = tr.rows
        diverged = tr.diverged_at is not None
        verdict = classify(tr.tail_max, diverged, sc.tol_conv)
        out[tr.name] = RunRecord(
            observer=tr.name,
            t=tr.t[:m].copy(),
            x_tilde_norm=tr.xt[:m].copy(),
            y_tilde_norm=tr.yt[:m].copy(),
            lambda_min_p=tr.lmin[:m].copy(),
            lambda_max_p=tr.lmax[:m].copy(),
            x=tr.x[:m].copy(),
            x_hat=tr.xh[:m].copy(),
            verdict=verdict,
            x_tilde0=tr.err0,
            tail_max=tr.tail_max if not diverged else math.inf,
            band=tr.band if not diverged else math.inf,
            final_error=float(tr.xt[m - 1]) if m else math.nan,
            diverged_at=tr.diverged_at,
            eq_norm=None if tr.eq is None else tr.eq[:m].copy(),
            pde_gap=None if tr.gap is None else tr.gap[:m].copy(),
            p_asymmetry=tr.asym,
            warnings=list(warnings),
        )
    return out


def _inputs(sc: Scenario):
    dt, n = sc.dt, int(round(sc.t_end / sc.dt))
    t_grid = np.arange(n + 2) * dt
    ones = np.ones(n + 2)

    def sample(prof, t):
        return np.asarray(prof(t), dtype=float) * ones

    w_nodes = sample(sc.omega_profile, t_grid)
    w_mid = sample(sc.omega_profile, t_grid + 0.5 * dt)
    v_nodes = np.stack([sample(sc.vx_profile, t_grid), sample(sc.vy_profile, t_grid)], 1)
    v_mid = np.stack([sample(sc.vx_profile, t_grid + 0.5 * dt), sample(sc.vy_profile, t_grid + 0.5 * dt)], 1)
    return n, w_nodes, w_mid, v_nodes, v_mid


def _noise_arrays(sc: Scenario, n: int, m_out: int):
    """Noise draws in the order the reference loop consumes them."""
    ny, nv = np.zeros((n + 1, m_out)), np.zeros((n + 1, 2))
    if sc.noise is None:
        return ny, nv
    src = NoiseSource(sc.noise.seed, sc.noise.sigma_landmark, sc.noise.sigma_velocity)
    width = (m_out if src.sigma_landmark else 0) + (2 if src.sigma_velocity else 0)
    if width == 0:
        return ny, nv
    z = src._rng.standard_normal((n + 1, width))
    col = 0
    if src.sigma_landmark:
        ny = src.sigma_landmark * z[:, :m_out]
        col = m_out
    if src.sigma_velocity:
        nv = src.sigma_velocity * z[:, col : col + 2]
    return ny, nv


def _run_compiled(scenario: Scenario, which: str):
    from . import fastloop

    sc = scenario.validate()
    kinds = [PREDICTIVE, STANDARD] if which == BOTH else [which]
    c = sc.c
    obs_report = observability_check(sc.landmarks)
    warnings = [] if obs_report.ok else [
        f"observability: FAILED (rank {obs_report.rank} < 6, lmin(C^T C)={obs_report.min_eigenvalue:.3g})"
    ]
    for w in warnings:
        log.warning(w)
    dt = sc.dt
    n, w_nodes, w_mid, v_nodes, v_mid = _inputs(sc)
    nd = int(round(sc.delay / dt))
    omega_int = lag_angles_from_samples(w_nodes, dt)
    lag = omega_int[: nd + 1].copy()
    noise_y, noise_v = _noise_arrays(sc, n, c.shape[0])
    stride = max(1, int(round(sc.record_every / dt)))
    cts = c.T @ sc.sigma
    out = {}
    for kind in kinds:
        if kind == STANDARD:
            mode = fastloop.MODE_STANDARD
        else:
            mode = fastloop.MODE_LITERAL if sc.phi_window == LITERAL else fastloop.MODE_SLIDING
        (rows, t, xt, yt, lmin, lmax, xr, xhr, err0, tail_max, band, div_at, asym, pinv_used) = fastloop.lockstep(
            mode, np.array(sc.x0, dtype=float), np.array(sc.x_hat0, dtype=float), sc.p0, c, cts, cts @ c,
            float(sc.epsilon), dt, n, nd, w_nodes, w_mid, v_nodes, v_mid, omega_int, lag,
            noise_y, noise_v, stride, 0.9 * sc.t_end - TIME_TOL, 0.8 * sc.t_end - TIME_TOL,
            float(sc.divergence_factor), TIME_TOL,
        )
        if pinv_used:
            log.warning("P is not positive definite; using pseudo-inverse")
        diverged = div_at >= 0.0
        out[kind] = RunRecord(
            observer=kind,
            t=t[:rows].copy(),
            x_tilde_norm=xt[:rows].copy(),
            y_tilde_norm=yt[:rows].copy(),
            lambda_min_p=lmin[:rows].copy(),
            lambda_max_p=lmax[:rows].copy(),
            x=xr[:rows].copy(),
            x_hat=xhr[:rows].copy(),
            verdict=classify(tail_max, diverged, sc.tol_conv),
            x_tilde0=float(err0),
            tail_max=float(tail_max) if not diverged else math.inf,
            band=float(band) if not diverged else math.inf,
            final_error=float(xt[rows - 1]) if rows else math.nan,
            diverged_at=float(div_at) if diverged else None,
            p_asymmetry=float(asym),
            warnings=list(warnings),
        )
    return out


def run_one(scenario: Scenario, which: str = PREDICTIVE) -> RunRecord:
    return run(scenario, which)[which]


# ---------------------------------------------------------------- sweeps


def worker_count() -> int:
    env = os.environ.get("OBSLAB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _sweep_cell(args):
    base, d, eps, which = args
    scen = replace(base, delay=d, epsilon=eps)
    rec = run_one(scen, which)
    return {
        "delay": d,
        "epsilon": eps,
        "observer": which,
        "verdict": rec.verdict,
        "tail_max": rec.tail_max,
        "final_error": rec.final_error,
        "diverged_at": rec.diverged_at,
    }


def sweep(base: Scenario, d_values, eps_values, which: str = PREDICTIVE, workers: int | None = None):
    """Verdict grid over (D, eps); returns ``(rows, thresholds)``.

    ``thresholds[D]`` is the smallest gain on the grid with a converged
    verdict, or None.
    """
    d_values, eps_values = list(d_values), list(eps_values)
    if not d_values or not eps_values:
        raise ValueError("sweep needs at least one delay and one gain")
    cells = [(base, float(d), float(e), which) for d in d_values for e in eps_values]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(cell) for cell in cells]
    rows.sort(key=lambda r: (r["delay"], r["epsilon"]))
    thresholds = {}
    for d in d_values:
        ok = [r["epsilon"] for r in rows if r["delay"] == float(d) and r["verdict"] == CONVERGED]
        thresholds[float(d)] = min(ok) if ok else None
    return rows, thresholds


@dataclass
class NoiseStudy:
    records: dict  # delay -> list of RunRecord, one per seed
    bands: dict  # delay -> band averaged over the seeds
    band_monotone: bool
    seeds: tuple = ()


def noise_study(base: Scenario, delays=(0.5, 1.0, 1.4), which: str = PREDICTIVE, n_seeds: int = 5) -> NoiseStudy:
    """Steady-state error band (max |X_tilde| over the last 20 %) against delay.

    The band of a single run is the maximum of a noisy signal, so each delay
    is run with ``n_seeds`` consecutive seeds starting at the configured one
    and the bands are averaged.
    """
    if base.noise is None:
        raise ValueError("noise study needs a noise configuration")
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")
    seeds = tuple(base.noise.seed + k for k in range(n_seeds))
    records, bands = {}, {}
    for d in delays:
        recs = [run_one(replace(base, delay=float(d), noise=replace(base.noise, seed=s)), which) for s in seeds]
        records[float(d)] = recs
        bands[float(d)] = float(np.mean([r.band for r in recs]))
    vals = [bands[float(d)] for d in delays]
    monotone = all(b > a for a, b in zip(vals, vals[1:]))
    return NoiseStudy(records, bands, monotone, seeds)


def provenance(sc: Scenario) -> dict:
    """Flat key/value echo of every setting that shaped a run."""
    return {
        "delay_s": sc.delay,
        "dt_s": sc.dt,
        "t_end_s": sc.t_end,
        "epsilon": sc.epsilon,
        "sigma_scale": sc.sigma_scale,
        "p0_scale": sc.p0_scale,
        "phi_window": sc.phi_window,
        "tol_conv": sc.tol_conv,
        "divergence_factor": sc.divergence_factor,
        "record_every_s": sc.record_every,
        "pde_cells": sc.pde_cells,
        "x0": " ".join(repr(float(v)) for v in sc.x0),
        "x_hat0": " ".join(repr(float(v)) for v in sc.x_hat0),
        "landmarks_m": " ".join(f"{p[0]!r},{p[1]!r}" for p in sc.landmarks.points.tolist()),
        "noise_generator": NOISE_GENERATOR if sc.noise else "none",
        "noise_sigma_landmark_m": sc.noise.sigma_landmark if sc.noise else 0.0,
        "noise_sigma_velocity_m_s": sc.noise.sigma_velocity if sc.noise else 0.0,
        "noise_seed": sc.noise.seed if sc.noise else "none",
    }
