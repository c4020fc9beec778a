"""Delay margin and gain interval for the predictive observer.

The convergence argument yields, for given landmark geometry ``C``, weight
``Sigma``, excitation window ``T`` and free scalars ``kappa1..kappa4``:

* ``delta1``, ``delta2`` and the decay rate ``mu`` of the Lyapunov-Krasovskii
  functional,
* the gain condition ``eps T exp(-eps T) >= upsilon2`` whose two solutions are
  the real branches of the Lambert W function,
* the largest admissible delay ``D_max``, root of ``D (D+1) (D+2) = upsilon1``,
* the overshoot factor of the exponential envelope of the error norm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

INV_E = math.exp(-1.0)

PRINCIPAL = "principal"
MINUS_ONE = "minus_one"

KAPPA1_GRID = np.logspace(-3, 3, 601)


class InfeasibleMargin(ValueError):
    """The requested constant does not exist for this configuration."""


# ---------------------------------------------------------------- Lambert W


def _halley(w, z, iters=50):
    for _ in range(iters):
        ew = math.exp(w)
        f = w * ew - z
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        den = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        if den == 0.0:
            # exp(w) underflowed; the seed is as good as it gets
            break
        step = f / den
        w_new = w - step
        if w_new == w or abs(step) <= 4e-16 * (1.0 + abs(w_new)):
            return w_new
        w = w_new
    return w


def _branch_point_series(p, sign):
    # W = -1 + s p - p^2/3 + s 11/72 p^3 with p = sqrt(2 (e z + 1))
    return -1.0 + sign * p - p * p / 3.0 + sign * 11.0 / 72.0 * p ** 3


def lambert_w(z: float, branch: str = PRINCIPAL) -> float:
    """Real Lambert W: the solution of ``w exp(w) = z`` on the chosen branch.

    ``principal`` covers ``z >= -1/e`` with ``w >= -1``; ``minus_one`` covers
    ``-1/e <= z < 0`` with ``w <= -1``. Seeds come from the branch-point
    series or the logarithmic asymptotics, refined by Halley's iteration.
    """
    z = float(z)
    if math.isnan(z):
        raise ValueError("lambert_w of NaN")
    # one ulp of slack at the branch point
    if z < -INV_E * (1.0 + 2.0 ** -52):
        raise ValueError(f"lambert_w: z={z} is below -1/e, no real value")
    q = max(math.e * z + 1.0, 0.0)
    p = math.sqrt(2.0 * q)
    if branch == PRINCIPAL:
        if z == 0.0:
            return 0.0
        if q == 0.0:
            return -1.0
        if p < 0.5:
            w = _branch_point_series(p, +1.0)
        elif z < 3.0:
            l1 = math.log1p(z)
            w = l1 * (1.0 - math.log1p(l1) / (2.0 + l1))
        else:
            l1 = math.log(z)
            w = l1 - math.log(l1) + math.log(l1) / l1
        return _halley(w, z)
    if branch == MINUS_ONE:
        if z >= 0.0:
            raise ValueError(f"lambert_w branch -1 needs -1/e <= z < 0, got {z}")
        if q == 0.0:
            return -1.0
        if p < 0.5:
            w = _branch_point_series(p, -1.0)
        else:
            l1 = math.log(-z)
            l2 = math.log(-l1)
            w = l1 - l2 + l2 / l1
        return _halley(w, z)
    raise ValueError(f"unknown branch {branch!r}")


# ---------------------------------------------------------------- gamma


def compute_gamma(
    omega_profile: Callable[[np.ndarray], np.ndarray],
    delay: float,
    horizon: float,
    dt: float,
    chunk: int = 2048,
) -> float:
    """sup over t in [0, horizon] of int_0^D |w(t + x - D) - w(t)|^2 dx.

    The matrix norm of ``A(w1) - A(w2)`` is the operator 2-norm, which for
    the block-diagonal skew difference is ``|w1 - w2|``.
    """
    if delay <= 0:
        raise ValueError("gamma needs a positive delay")
    nx = max(1, int(round(delay / dt)))
    xs = np.linspace(0.0, delay, nx + 1)
    wx = np.full(nx + 1, delay / nx)
    wx[0] = wx[-1] = 0.5 * delay / nx
    ts = np.arange(0.0, horizon + 0.5 * dt, dt)
    best = 0.0
    for i in range(0, len(ts), chunk):
        t = ts[i : i + chunk]
        shifted = np.asarray(omega_profile(t[:, None] + xs[None, :] - delay), dtype=float)
        now = np.asarray(omega_profile(t), dtype=float)
        diff2 = (shifted - np.broadcast_to(now, t.shape)[:, None]) ** 2
        best = max(best, float((diff2 @ wx).max()))
    return best


# ---------------------------------------------------------------- constants


@dataclass(frozen=True)
class Spectra:
    """Eigenvalue bounds of the landmark/weight products used by the margins."""

    csc_min: float
    cs2c_max: float
    ctc_max: float
    ctc_min: float

    @classmethod
    def of(cls, c: np.ndarray, sigma: np.ndarray) -> "Spectra":
        c = np.asarray(c, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        csc = np.linalg.eigvalsh(c.T @ sigma @ c)
        cs2c = np.linalg.eigvalsh(c.T @ sigma @ sigma @ c)
        ctc = np.linalg.eigvalsh(c.T @ c)
        return cls(float(csc[0]), float(cs2c[-1]), float(ctc[-1]), float(ctc[0]))


@dataclass
class MarginInputs:
    c: np.ndarray
    sigma: np.ndarray
    gamma: float
    t_window: float
    delay: float
    epsilon: float
    kappa1: float = 1.0
    kappa2: float | None = None  # default 1 / (2 (1 + D))
    kappa3: float = 1.0
    kappa4: float = 1.0

    def __post_init__(self):
        if self.kappa2 is None:
            self.kappa2 = 1.0 / (2.0 * (1.0 + self.delay))
        for name in ("t_window", "epsilon", "kappa1", "kappa2", "kappa3", "kappa4"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.gamma < 0 or self.delay < 0:
            raise ValueError("gamma and delay must be non-negative")
        self.spectra = Spectra.of(self.c, self.sigma)

    def beta1(self) -> float:
        t = self.t_window
        return 2.0 * t * math.exp(-self.epsilon * t) * self.spectra.csc_min


@dataclass(frozen=True)
class Theorem1Constants:
    delta1: float
    delta2: float
    rho: float
    mu: float
    beta1: float
    feasible: bool


def theorem1_constants(inputs: MarginInputs) -> Theorem1Constants:
    s = inputs.spectra
    d, k1, k2 = inputs.delay, inputs.kappa1, inputs.kappa2
    beta1 = inputs.beta1()
    delta1 = (
        inputs.epsilon * beta1
        + s.csc_min
        - k1 * s.cs2c_max
        - d * (d / 2.0 + 1.0) * inputs.gamma / (k1 * k2) * s.ctc_max
    )
    delta2 = 1.0 - (1.0 + d) * k2
    mu = min(delta1 / beta1, delta2 / (1.0 + d))
    return Theorem1Constants(
        delta1=delta1,
        delta2=delta2,
        rho=1.0 / k1,
        mu=mu,
        beta1=beta1,
        feasible=delta1 > 0 and delta2 > 0,
    )


def upsilon2(inputs: MarginInputs) -> float:
    s = inputs.spectra
    d, k1 = inputs.delay, inputs.kappa1
    num = d * (d + 1.0) * (d + 2.0) * inputs.gamma / k1 * s.ctc_max + 2.0 * k1 * s.cs2c_max
    return 0.5 * (num / (2.0 * s.csc_min) - 1.0)


def upsilon1(inputs: MarginInputs) -> float:
    s = inputs.spectra
    k1 = inputs.kappa1
    num = 2.0 * s.csc_min * (1.0 + 2.0 * INV_E) - 2.0 * k1 * s.cs2c_max
    den = inputs.gamma / k1 * s.ctc_max
    if den == 0.0:
        return math.inf if num > 0 else -math.inf
    return num / den


def gain_margin_residual(epsilon: float, t_window: float, ups2: float) -> float:
    """eps T exp(-eps T) - upsilon2; positive inside the admissible interval."""
    x = epsilon * t_window
    return x * math.exp(-x) - ups2


def epsilon_interval(inputs: MarginInputs) -> tuple[float, float]:
    """Admissible gain interval ``(eps_min, eps_max)``.

    Returns ``(0, inf)`` when the gain condition holds for every positive
    gain and raises :class:`InfeasibleMargin` when no gain satisfies it.
    """
    u2 = upsilon2(inputs)
    t = inputs.t_window
    if u2 <= 0.0:
        return 0.0, math.inf
    if u2 > INV_E * (1.0 + 1e-12):
        raise InfeasibleMargin(f"upsilon2={u2:.6g} exceeds 1/e: no admissible gain")
    z = -min(u2, INV_E)
    eps_min = -lambert_w(z, PRINCIPAL) / t
    eps_max = -lambert_w(z, MINUS_ONE) / t
    for e in (eps_min, eps_max):
        if abs(gain_margin_residual(e, t, u2)) > 1e-9:
            raise ArithmeticError("gain interval endpoint failed the residual check")
    return eps_min, eps_max


def _cubic(d):
    return d * (d + 1.0) * (d + 2.0)


def dmax_bisection(ups1: float, tol: float = 1e-14) -> float:
    """Positive root of D (D+1) (D+2) = upsilon1 by bisection."""
    if ups1 <= 0:
        raise InfeasibleMargin("upsilon1 must be positive")
    lo, hi = 0.0, 1.0
    while _cubic(hi) < ups1:
        hi *= 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if _cubic(mid) < ups1:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def compute_dmax(inputs: MarginInputs) -> float:
    """Largest delay keeping the gain condition solvable; ``inf`` when gamma is 0."""
    u1 = upsilon1(inputs)
    if math.isinf(u1) and u1 > 0:
        return math.inf
    disc = u1 * u1 / 4.0 - 1.0 / 27.0
    if u1 <= 0 or disc < 0:
        raise InfeasibleMargin(
            f"upsilon1={u1:.6g}: cubic-root expression for D_max is complex"
        )
    sigma = (u1 / 2.0 + math.sqrt(disc)) ** (1.0 / 3.0)
    d_max = 1.0 / (3.0 * sigma) + sigma - 1.0
    check = dmax_bisection(u1)
    if abs(check - d_max) > 1e-9 * max(1.0, d_max):
        raise ArithmeticError(f"D_max formula {d_max} disagrees with cubic root {check}")
    return d_max


@dataclass(frozen=True)
class Envelope:
    overshoot: float
    mu: float
    v_phi1: float
    v_phi2: float
    w_phi: tuple
    psi1: float
    psi2: float


def theorem2_envelope(inputs: MarginInputs, beta2: float, literal_min: bool = False) -> Envelope:
    """Overshoot ``sqrt(phi2 psi2 / (phi1 psi1))`` and rate ``mu`` of the error envelope.

    ``literal_min`` takes ``min{beta2, rho (1 + D)}`` for the upper functional
    bound instead of the max; the min does not bound the functional from
    above in general.
    """
    t1 = theorem1_constants(inputs)
    s = inputs.spectra
    d, rho = inputs.delay, t1.rho
    v_phi1 = min(t1.beta1, rho)
    pick = min if literal_min else max
    v_phi2 = pick(beta2, rho * (1.0 + d))
    k3, k4 = inputs.kappa3, inputs.kappa4
    w1 = 1.0 + k3
    w2 = (1.0 + 1.0 / k3) * s.ctc_max * d
    w3 = 1.0 + k4
    w4 = (1.0 + 1.0 / k4) * s.ctc_max * d
    psi1 = 1.0 / max(w3, 1.0 + w4)
    psi2 = max(w1, 1.0 + w2)
    overshoot = math.sqrt(v_phi2 * psi2 / (v_phi1 * psi1))
    return Envelope(overshoot, t1.mu, v_phi1, v_phi2, (w1, w2, w3, w4), psi1, psi2)


# ---------------------------------------------------------------- report


def default_kappa1(c, sigma, gamma, delay, grid=KAPPA1_GRID) -> float:
    """Grid minimizer of the right-hand side of the gain condition."""
    s = Spectra.of(c, sigma)
    rhs = _cubic(delay) * gamma / grid * s.ctc_max + 2.0 * grid * s.cs2c_max
    return float(grid[int(np.argmin(rhs))])


@dataclass
class MarginReport:
    d_max: float
    eps_min: float
    eps_max: float
    delta1: float
    delta2: float
    mu: float
    overshoot: float
    beta1: float
    feasible: bool
    gamma: float
    t_window: float
    delay: float
    epsilon: float
    kappa1: float
    kappa2: float
    kappa3: float
    kappa4: float
    beta2: float
    upsilon1: float
    upsilon2: float
    eps_min_residual: float = math.nan
    eps_max_residual: float = math.nan
    notes: list = field(default_factory=list)

    def as_dict(self):
        return asdict(self)


def margin_report(inputs: MarginInputs, beta2: float, literal_min: bool = False) -> MarginReport:
    notes = []
    t1 = theorem1_constants(inputs)
    env = theorem2_envelope(inputs, beta2, literal_min)
    u1, u2 = upsilon1(inputs), upsilon2(inputs)
    try:
        d_max = compute_dmax(inputs)
    except InfeasibleMargin as exc:
        d_max = math.nan
        notes.append(f"D_max: {exc}")
    try:
        eps_min, eps_max = epsilon_interval(inputs)
    except InfeasibleMargin as exc:
        eps_min = eps_max = math.nan
        notes.append(f"gain interval: {exc}")
    res = [
        gain_margin_residual(e, inputs.t_window, u2) if math.isfinite(e) and e > 0 else math.nan
        for e in (eps_min, eps_max)
    ]
    if not t1.feasible:
        notes.append("stability constants infeasible: delta1 or delta2 is not positive")
    return MarginReport(
        d_max=d_max,
        eps_min=eps_min,
        eps_max=eps_max,
        delta1=t1.delta1,
        delta2=t1.delta2,
        mu=t1.mu,
        overshoot=env.overshoot,
        beta1=t1.beta1,
        feasible=t1.feasible,
        gamma=inputs.gamma,
        t_window=inputs.t_window,
        delay=inputs.delay,
        epsilon=inputs.epsilon,
        kappa1=inputs.kappa1,
        kappa2=inputs.kappa2,
        kappa3=inputs.kappa3,
        kappa4=inputs.kappa4,
        beta2=beta2,
        upsilon1=u1,
        upsilon2=u2,
        eps_min_residual=res[0],
        eps_max_residual=res[1],
        notes=notes,
    )


def select_window(t_min: float, epsilon: float) -> float:
    """Excitation window used by the margins.

    Any ``T >= t_min`` satisfies the Gramian bound; ``beta1 = 2 T exp(-eps T)
    lmin(C^T Sigma C)`` peaks at ``T = 1 / eps``, so that value is used unless
    it falls below ``t_min``.
    """
    return max(t_min, 1.0 / epsilon)


def analyze(
    c,
    sigma,
    epsilon: float,
    delay: float,
    omega_profile: Callable[[np.ndarray], np.ndarray],
    dt: float,
    horizon: float,
    kappa1: float | None = None,
    p0=None,
    literal_min: bool = False,
    gamma_dt: float | None = None,
) -> MarginReport:
    """Margin report for a scenario: gamma, excitation window, beta2 and constants.

    ``kappa1=None`` selects :func:`default_kappa1`. ``gamma`` is evaluated on a
    grid of step ``gamma_dt`` (default ``max(dt, 0.01)``) over ``[0, horizon]``.
    """
    from .riccati import excitation_constants

    c = np.asarray(c, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gdt = gamma_dt if gamma_dt is not None else max(dt, 0.01)
    gamma = compute_gamma(omega_profile, delay, horizon, gdt) if delay > 0 else 0.0
    exc = excitation_constants(c, sigma, epsilon, omega_profile, horizon, dt, p0=p0)
    t_window = select_window(exc.t_window, epsilon)
    k1 = default_kappa1(c, sigma, gamma, delay) if kappa1 is None else float(kappa1)
    inputs = MarginInputs(c, sigma, gamma, t_window, delay, epsilon, kappa1=k1)
    report = margin_report(inputs, exc.beta2, literal_min)
    report.notes.insert(0, f"excitation: smallest admissible T on the grid is {exc.t_window:.6g} s")
    return report
