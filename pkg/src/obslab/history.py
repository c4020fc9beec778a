"""Fixed-step histories for delayed signals.

A :class:`DelayLine` keeps the last ``ceil(D/dt) + 1`` samples of a vector
signal on a uniform time grid. Reading it at ``t - x`` for ``x`` in ``[0, D]``
is the transport-equation solution ``U(x, t) = C X(t + x - D)`` evaluated at
the stored grid. Times before the first sample read a fixed prefill value.
"""

from __future__ import annotations

import math

import numpy as np

TIME_TOL = 1e-9

LITERAL = "literal"
SLIDING = "sliding"
PHI_WINDOWS = (LITERAL, SLIDING)


class DelayLine:
    """Ring buffer of a vector signal sampled every ``dt`` seconds.

    Every sample is written twice, at slot ``i`` and ``i + capacity``, so the
    most recent ``capacity`` samples are always one contiguous slice.
    """

    def __init__(self, delay: float, dt: float, dim: int, prefill=None, t_start: float = 0.0):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if delay < 0:
            raise ValueError("delay must be non-negative")
        self.dt = float(dt)
        self.delay = float(delay)
        self.dim = int(dim)
        self.capacity = int(math.ceil(delay / dt - TIME_TOL)) + 1
        if prefill is None:
            prefill = np.zeros(self.dim)
        self.prefill = np.array(prefill, dtype=float).reshape(self.dim)
        self.t_start = float(t_start)
        self._buf = np.tile(self.prefill, (2 * self.capacity, 1))
        self._head = 0  # slot the next push writes to
        self._count = 0
        self._t_last = None

    def __len__(self):
        return min(self._count, self.capacity)

    @property
    def newest_time(self):
        return self._t_last

    @property
    def oldest_time(self):
        if self._t_last is None:
            return None
        return self._t_last - (len(self) - 1) * self.dt

    def push(self, t: float, value) -> "DelayLine":
        if self._t_last is None:
            if abs(t - self.t_start) > TIME_TOL:
                raise ValueError(f"first push must be at t={self.t_start}, got {t}")
        elif abs(t - (self._t_last + self.dt)) > TIME_TOL:
            raise ValueError(
                f"out-of-order push: expected t={self._t_last + self.dt}, got {t}"
            )
        v = np.asarray(value, dtype=float)
        i = self._head
        self._buf[i] = v
        self._buf[i + self.capacity] = v
        self._head = (i + 1) % self.capacity
        self._count += 1
        self._t_last = self.t_start + (self._count - 1) * self.dt
        return self

    def latest(self) -> np.ndarray:
        if self._t_last is None:
            return self.prefill.copy()
        return self._buf[self._head - 1 + self.capacity].copy()

    def window(self, n: int) -> np.ndarray:
        """The newest ``n`` samples, oldest first; prefill stands in before t_start."""
        if n > self.capacity:
            raise ValueError(f"window of {n} samples exceeds capacity {self.capacity}")
        end = self._head + self.capacity
        return self._buf[end - n : end]

    def query(self, t: float) -> np.ndarray:
        """Linear interpolation at ``t``; before ``t_start`` returns the prefill."""
        if t < self.t_start - TIME_TOL:
            return self.prefill.copy()
        if self._t_last is None or t > self._t_last + TIME_TOL:
            raise ValueError(f"query at t={t} is beyond the newest sample")
        back = (self._t_last - t) / self.dt
        k = int(math.floor(back + TIME_TOL))
        frac = back - k
        if abs(frac) <= TIME_TOL:
            frac = 0.0
        if k > self.capacity - 1 or (k == self.capacity - 1 and frac > 0.0):
            raise ValueError(f"query at t={t} is older than the stored history")
        newest = self._head - 1 + self.capacity
        a = self._buf[newest - k]
        if frac == 0.0:
            return a.copy()
        b = self._buf[newest - k - 1]
        # before t_start the older neighbour is prefill already
        return (1.0 - frac) * a + frac * b


def trapezoid_weights(n_intervals: int, dt: float) -> np.ndarray:
    w = np.full(n_intervals + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def rotate_blocks(angles: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Apply rot(-angle_k) = Phi for angle_k to each 2-block of row ``f[k]``."""
    c = np.cos(angles)[:, None]
    s = np.sin(angles)[:, None]
    out = np.empty_like(f)
    out[:, 0::2] = c * f[:, 0::2] + s * f[:, 1::2]
    out[:, 1::2] = -s * f[:, 0::2] + c * f[:, 1::2]
    return out


def lag_angles_from_samples(omega_samples: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative trapezoid of w on [0, k dt] for every sample index k."""
    w = np.asarray(omega_samples, dtype=float)
    return np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * dt)])


def window_angles(
    phi_window: str,
    n: int,
    lag_angles: np.ndarray | None = None,
    omega_window: np.ndarray | None = None,
) -> np.ndarray:
    """Transition angles for theta_j = t - (n - j) dt, j = 0..n (oldest first).

    ``literal``: integral of w over [0, t - theta] (from ``lag_angles``).
    ``sliding``: integral of w over [theta, t] (from the stored running integral).
    """
    if phi_window == LITERAL:
        if lag_angles is None or len(lag_angles) < n + 1:
            raise ValueError("literal window needs lag angles covering the delay")
        return lag_angles[n::-1][: n + 1]
    if phi_window == SLIDING:
        if omega_window is None or len(omega_window) != n + 1:
            raise ValueError("sliding window needs the running w integral over the delay")
        return omega_window[-1] - omega_window
    raise ValueError(f"unknown phi_window {phi_window!r}")


def convolve_history(
    line_f: DelayLine,
    omega_integral_line: DelayLine,
    t: float,
    delay: float,
    phi_window: str = LITERAL,
    lag_angles: np.ndarray | None = None,
    head=None,
) -> np.ndarray:
    """Trapezoid quadrature of ``Phi(t - theta, 0) f(theta)`` over ``[t - D, t]``.

    ``head`` supplies ``f(t)`` when it has not been pushed yet; otherwise the
    line must already hold a sample at ``t``. Histories must share ``dt`` and
    ``delay`` must be a multiple of it.
    """
    dt = line_f.dt
    n = int(round(delay / dt))
    if abs(n * dt - delay) > TIME_TOL:
        raise ValueError("delay must be a multiple of the history step")
    if n == 0:
        return np.zeros(line_f.dim)
    newest = t if head is None else t - dt
    if line_f.newest_time is None or abs(line_f.newest_time - newest) > TIME_TOL:
        raise ValueError("insufficient history: line does not reach the evaluation time")
    if head is None:
        f = line_f.window(n + 1)
    else:
        if n > line_f.capacity:
            raise ValueError("insufficient history span")
        f = np.vstack([line_f.window(n), np.asarray(head, dtype=float)[None, :]])
    om = None
    if phi_window == SLIDING:
        if abs(omega_integral_line.newest_time - t) > TIME_TOL:
            raise ValueError("w integral history must include the evaluation time")
        om = omega_integral_line.window(n + 1)[:, 0]
    angles = window_angles(phi_window, n, lag_angles, om)
    w = trapezoid_weights(n, dt)
    return w @ rotate_blocks(angles, f)
