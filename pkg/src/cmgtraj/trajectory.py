"""Sampled state/control curves with the interpolation rules used everywhere.

A trajectory is stored on a fixed time grid.  States interpolate with a
cubic Hermite rule whose slopes are the dynamics evaluated at the
samples; controls interpolate linearly.  Every consumer (projection,
Riccati sweeps, re-integration checks, serialization) uses these same
rules, so a stored file reproduces the in-memory curve exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Trajectory:
    """State/control curve sampled on a strictly increasing time grid."""

    t: np.ndarray        # (N,)
    x: np.ndarray        # (N, nx)
    u: np.ndarray        # (N, nu)
    xdot: np.ndarray     # (N, nx) slopes for Hermite interpolation

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0.0):
            raise ValueError("trajectory grid must be strictly increasing")
        n = self.t.shape[0]
        if self.x.shape[0] != n or self.u.shape[0] != n or self.xdot.shape != self.x.shape:
            raise ValueError("trajectory arrays must share the grid length")

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def _locate(self, tq: float) -> tuple[int, float, float]:
        t = self.t
        idx = int(np.searchsorted(t, tq, side="right")) - 1
        idx = min(max(idx, 0), len(t) - 2)
        h = t[idx + 1] - t[idx]
        return idx, (tq - t[idx]) / h, h

    def state(self, tq: float) -> np.ndarray:
        """Cubic Hermite interpolation of the state at time ``tq``."""
        i, s, h = self._locate(tq)
        s2 = s * s
        s3 = s2 * s
        h00 = 2.0 * s3 - 3.0 * s2 + 1.0
        h10 = s3 - 2.0 * s2 + s
        h01 = -2.0 * s3 + 3.0 * s2
        h11 = s3 - s2
        return (h00 * self.x[i] + (h10 * h) * self.xdot[i]
                + h01 * self.x[i + 1] + (h11 * h) * self.xdot[i + 1])

    def control(self, tq: float) -> np.ndarray:
        """Linear interpolation of the control at time ``tq``."""
        i, s, _ = self._locate(tq)
        return (1.0 - s) * self.u[i] + s * self.u[i + 1]


def uniform_grid(horizon: float, dt: float = 0.05) -> np.ndarray:
    """Uniform sample grid covering [0, horizon] with spacing dt."""
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a multiple of the grid step {dt}")
    return np.linspace(0.0, horizon, n + 1)


def simpson_weights(n: int, dt: float) -> np.ndarray:
    """Composite Simpson quadrature weights for n uniformly spaced samples.

    Falls back to a trapezoid for the final interval when n is even.
    """
    w = np.zeros(n)
    if n < 2:
        return w
    m = n if n % 2 == 1 else n - 1
    w[0:m] = 2.0
    w[1:m:2] = 4.0
    w[0] = 1.0
    w[m - 1] = 1.0
    w[:m] *= dt / 3.0
    if n % 2 == 0:
        w[-2] += 0.5 * dt
        w[-1] += 0.5 * dt
    return w


class MatrixCurve:
    """Linear interpolation of matrix samples along a trajectory grid."""

    def __init__(self, t: np.ndarray, values: np.ndarray):
        self.t = t
        self.values = values

    def __call__(self, tq: float) -> np.ndarray:
        t = self.t
        idx = int(np.searchsorted(t, tq, side="right")) - 1
        idx = min(max(idx, 0), len(t) - 2)
        s = (tq - t[idx]) / (t[idx + 1] - t[idx])
        return (1.0 - s) * self.values[idx] + s * self.values[idx + 1]
