"""Temporal basis functions and their exact integrals against the retarded kernel.

The unknown ``phi`` is continuous and piecewise linear in time (hats
``beta^m`` centred at ``t_m = m dt``), so the density entering the single
layer operator, ``psi = d phi / dt``, is piecewise constant:

    psi(t) = sum_m psi^m chi_m(t),   chi_m = indicator of I_m = (t_{m-1}, t_m].

Testing with the indicator of ``I_n`` reduces all time integrals to the
radial functions

    S_j(r) = int_{I_n} chi_{n-j}(t - r) dt = dt * max(0, 1 - |r/dt - j|),

which depend on the lag ``j`` only (Toeplitz structure) and vanish
identically for ``j <= -1`` (causality).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Coefficients (in powers of u, padded to degree 2) of S_j / dt on the radial
# piece r in [k dt, (k+1) dt], u = r/dt - k, indexed by m = j - k.  Row 2 is
# zero: a piece only feeds lags k and k + 1.
LAG_SHAPES = np.array([
    [1.0, -1.0, 0.0],  # m = 0: 1 - u
    [0.0, 1.0, 0.0],   # m = 1: u
    [0.0, 0.0, 0.0],   # m = 2: none
])


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t_n = n dt, n = 0..N_t."""

    dt: float
    n_steps: int

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @classmethod
    def from_horizon(cls, T: float, dt: float) -> "TimeGrid":
        """Smallest grid with N_t dt >= T (a tiny slack absorbs round-off in T/dt)."""
        if T <= 0:
            raise ValueError("T must be positive")
        return cls(dt=dt, n_steps=max(1, math.ceil(T / dt - 1e-9)))

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def extended(self, n_steps: int) -> "TimeGrid":
        return TimeGrid(self.dt, n_steps)


def pulse_eval(m: int, t, grid: TimeGrid):
    """chi_m(t): 1 on (t_{m-1}, t_m], 0 elsewhere."""
    s = np.asarray(t, dtype=float) / grid.dt
    return np.where((s > m - 1) & (s <= m), 1.0, 0.0)


def hat_eval(m: int, t, grid: TimeGrid):
    """beta^m(t) = max(0, 1 - |t - t_m| / dt)."""
    s = np.abs(np.asarray(t, dtype=float) / grid.dt - m)
    return np.maximum(0.0, 1.0 - s)


def hat_deriv(m: int, t, grid: TimeGrid):
    """Derivative of beta^m: +1/dt on (t_{m-1}, t_m), -1/dt on (t_m, t_{m+1}), else 0.

    At the three kinks the one-sided average is returned.
    """
    s = np.asarray(t, dtype=float) / grid.dt - m
    rising = np.where((s > -1) & (s < 0), 1.0, 0.0) + np.where((s == -1) | (s == 0), 0.5, 0.0)
    falling = np.where((s > 0) & (s < 1), 1.0, 0.0) + np.where((s == 0) | (s == 1), 0.5, 0.0)
    return (rising - falling) / grid.dt


def pulses_to_hats(psi: np.ndarray, dt: float) -> np.ndarray:
    """Hat coefficients phi(t_m) = dt * sum_{k<=m} psi^k of phi = int_0^t psi (last axis = time)."""
    return dt * np.cumsum(psi, axis=-1)


def hats_to_pulses(phi: np.ndarray, dt: float) -> np.ndarray:
    """Inverse of :func:`pulses_to_hats` (phi(t_0) = 0)."""
    return np.diff(phi, axis=-1, prepend=0.0) / dt


@dataclass(frozen=True)
class RadialKernel:
    """S_j(r) as a piecewise polynomial.

    ``coeffs[p]`` holds the coefficients in ``u = r/dt - k`` on the radial
    interval [k dt, (k+1) dt] with k = ``first + p``.
    """

    j: int
    dt: float
    first: int
    coeffs: np.ndarray

    @property
    def breakpoints(self) -> np.ndarray:
        """Piece boundaries clamped to r >= 0 (empty kernel -> empty array)."""
        if len(self.coeffs) == 0:
            return np.empty(0)
        k = np.arange(self.first, self.first + len(self.coeffs) + 1)
        return np.maximum(0.0, k * self.dt)

    @property
    def support(self) -> tuple[float, float]:
        b = self.breakpoints
        return (0.0, 0.0) if len(b) == 0 else (float(b[0]), float(b[-1]))

    def coeffs_in_r(self) -> np.ndarray:
        """Coefficients c0 + c1 r + c2 r^2 per piece (same row order as ``coeffs``)."""
        out = np.empty_like(self.coeffs)
        for p, (a0, a1, a2) in enumerate(self.coeffs):
            k = self.first + p
            s = 1.0 / self.dt
            # u = s r - k
            out[p] = (a0 - a1 * k + a2 * k * k, (a1 - 2 * a2 * k) * s, a2 * s * s)
        return out

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for p, (a0, a1, a2) in enumerate(self.coeffs):
            k = self.first + p
            u = r / self.dt - k
            inside = (u >= 0) & (u < 1) if p < len(self.coeffs) - 1 else (u >= 0) & (u <= 1)
            out = np.where(inside & (r >= 0), a0 + u * (a1 + u * a2), out)
        return out


def radial_kernel(j: int, grid_or_dt) -> RadialKernel:
    """Exact S_j(r) = int_{I_n} chi_{n-j}(t - r) dt for lag ``j``."""
    dt = grid_or_dt.dt if isinstance(grid_or_dt, TimeGrid) else float(grid_or_dt)
    if j <= -1:
        return RadialKernel(j=j, dt=dt, first=0, coeffs=np.zeros((0, 3)))
    first = max(0, j - 1)
    rows = [dt * LAG_SHAPES[j - k] for k in range(first, j + 1)]
    return RadialKernel(j=j, dt=dt, first=first, coeffs=np.array(rows))


def radial_kernel_closed_form(j: int, dt: float, r):
    """S_j as the length of I_n intersected with I_{n-j} + r."""
    r = np.asarray(r, dtype=float)
    lo = np.maximum(0.0, (1 - j) * dt + r - dt)
    hi = np.minimum(dt, (1 - j) * dt + r)
    return np.where(r >= 0, np.maximum(0.0, hi - lo), 0.0)
