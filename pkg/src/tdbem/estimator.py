"""Residual error indicators per triangle and time interval.

For triangle D and interval I_n:

    eta2_grad(D, I_n) = h_D * Trap_{I_n} [ int_D |grad_G R|^2 ]
    eta2_time(D, I_n) = dt  * Trap_{I_n} [ int_D |dt R|^2 ]

with the trapezoidal rule over the end points of I_n and a 7-point interior
triangle rule in space.  ``dt R`` is the backward difference on I_n and is
therefore constant in time, so its trapezoidal value is the value itself.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import SurfaceMesh
from .potential import PotentialEvaluator, tangential_projection
from .quadrature import TRIANGLE_7
from .solver import SpaceTimeDensity

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class IndicatorTable:
    """Squared indicators, arrays of shape (N_triangles, N_t)."""

    eta2_grad: np.ndarray
    eta2_time: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.eta2_grad, dtype=float)
        t = np.asarray(self.eta2_time, dtype=float)
        if g.shape != t.shape or g.ndim != 2:
            raise ValueError("eta2_grad and eta2_time must be matching 2d arrays")
        if np.any(g < 0) or np.any(t < 0):
            raise ValueError("squared indicators must be nonnegative")
        object.__setattr__(self, "eta2_grad", g)
        object.__setattr__(self, "eta2_time", t)

    @classmethod
    def from_totals(cls, eta2: np.ndarray) -> "IndicatorTable":
        """Table with a single interval holding the given per-triangle totals in the grad part."""
        eta2 = np.asarray(eta2, dtype=float)[:, None]
        return cls(eta2, np.zeros_like(eta2))

    @property
    def n_triangles(self) -> int:
        return self.eta2_grad.shape[0]

    @property
    def eta2_per_triangle(self) -> np.ndarray:
        """eta^2(D) = sum_n (eta2_grad + eta2_time)."""
        return self.eta2_grad.sum(axis=1) + self.eta2_time.sum(axis=1)

    @property
    def eta_per_triangle(self) -> np.ndarray:
        return np.sqrt(self.eta2_per_triangle)

    @property
    def total_grad(self) -> float:
        return float(np.sqrt(self.eta2_grad.sum()))

    @property
    def total_time(self) -> float:
        return float(np.sqrt(self.eta2_time.sum()))

    @property
    def total(self) -> float:
        return total_eta(self)

    @property
    def eta_max(self) -> float:
        return eta_max(self)


def total_eta(table: IndicatorTable) -> float:
    """sqrt(sum_D eta^2(D))."""
    return float(np.sqrt(np.sum(table.eta2_per_triangle)))


def eta_max(table: IndicatorTable) -> float:
    """max_D eta(D)."""
    e = table.eta2_per_triangle
    return float(np.sqrt(e.max())) if e.size else 0.0


def indicator_points(mesh: SurfaceMesh):
    """Interior quadrature points: positions (T*7, 3), weights (T, 7) including areas."""
    bary, w = TRIANGLE_7
    pos = np.einsum("qv,tvc->tqc", bary, mesh.vertices[mesh.triangles]).reshape(-1, 3)
    weights = w[None, :] * mesh.areas[:, None]
    return pos, weights


def indicators_from_fields(mesh: SurfaceMesh, dt: float, R: np.ndarray, gradR: np.ndarray) -> IndicatorTable:
    """Assemble the table from residual samples at the indicator points.

    ``R`` has shape (N_t + 1, T*7) with values at t_0..t_{N_t}; ``gradR`` has
    shape (N_t + 1, T*7, 3) and must already be tangential.
    """
    _, w = indicator_points(mesh)
    nt = R.shape[0] - 1
    T = mesh.n_triangles
    g2 = (gradR**2).sum(axis=2).reshape(nt + 1, T, 7)
    q_grad = np.einsum("ntq,tq->nt", g2, w)  # int_D |grad R|^2 at each grid time
    dR = np.diff(R, axis=0).reshape(nt, T, 7) / dt
    q_time = np.einsum("ntq,tq->nt", dR**2, w)
    h = mesh.diameters
    eta2_grad = (h[:, None] * 0.5 * dt * (q_grad[:-1] + q_grad[1:]).T)
    eta2_time = dt * dt * q_time.T
    return IndicatorTable(eta2_grad, eta2_time)


def compute_indicators(mesh: SurfaceMesh, density: SpaceTimeDensity, rhs, reg_order: int = 8) -> IndicatorTable:
    """Residual indicators for a density computed on ``mesh``."""
    grid = density.grid
    pos, _ = indicator_points(mesh)
    steps = np.arange(0, grid.n_steps + 1)
    ev = PotentialEvaluator(mesh, density, reg_order=reg_order)
    pot = ev.at_steps(pos, steps).T  # (N_t+1, P)
    grad = np.transpose(ev.grad_at_steps(pos, steps), (1, 0, 2))  # (N_t+1, P, 3)
    tri_of_point = np.repeat(np.arange(mesh.n_triangles), 7)
    normals = mesh.normals[tri_of_point]
    R = np.empty_like(pot)
    gradR = np.empty_like(grad)
    for n, t in enumerate(grid.times):
        R[n] = np.asarray(rhs.dtf(t, pos)) - pot[n]
        gradR[n] = tangential_projection(normals, np.asarray(rhs.grad_dtf(t, pos)) - grad[n])
    return indicators_from_fields(mesh, grid.dt, R, gradR)


def synthetic_indicators(mesh: SurfaceMesh, grid, residual: Callable, grad_residual: Callable) -> IndicatorTable:
    """Indicators of an injected residual field R(t, X) with tangential gradient."""
    pos, _ = indicator_points(mesh)
    tri_of_point = np.repeat(np.arange(mesh.n_triangles), 7)
    normals = mesh.normals[tri_of_point]
    R = np.stack([np.asarray(residual(t, pos), dtype=float) for t in grid.times])
    G = np.stack([tangential_projection(normals, np.asarray(grad_residual(t, pos), dtype=float))
                  for t in grid.times])
    return indicators_from_fields(mesh, grid.dt, R, G)


def write_indicator_csv(table: IndicatorTable, path) -> None:
    g = table.eta2_grad.sum(axis=1)
    t = table.eta2_time.sum(axis=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["triangle_id", "eta2_grad", "eta2_time", "eta2_total"])
        for i, (a, b) in enumerate(zip(g, t)):
            w.writerow([i, repr(float(a)), repr(float(b)), repr(float(a + b))])
