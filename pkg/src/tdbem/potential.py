"""Point evaluation of the retarded single layer potential and the residual.

The potential of the piecewise constant density ``psi = sum psi_i^m chi_m(t) xi_i(x)`` is

    V psi(t, x) = 1/(4 pi) sum_{i,m} psi_i^m int_G xi_i(y) chi_m(t - |x-y|) / |x-y| dy,

and the residual of the discrete solution is ``R = dtf - V psi``.  Its
gradient splits into annulus integrals of ``xi_i(y) (x - y)/|x - y|^3``
(principal values when ``x`` lies on the source triangle) and, because
``psi`` jumps at every t_m, circle integrals over the intersection of the
light cone ``|x - y| = t - t_m`` with the surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .assembly import FOUR_PI, _triangle_geometry
from .mesh import SurfaceMesh
from .quadrature import gauss_legendre
from .solver import SpaceTimeDensity

_EDGE_TOL = 1e-12


class EdgePointError(ValueError):
    """Evaluation point is not strictly inside its host triangle."""


@dataclass(frozen=True)
class EvalPoint:
    """Point on the surface given by host triangle and barycentric coordinates."""

    triangle: int
    bary: tuple[float, float, float]

    def position(self, mesh: SurfaceMesh) -> np.ndarray:
        return np.asarray(self.bary) @ mesh.vertices[mesh.triangles[self.triangle]]


def _padded_psi(density: SpaceTimeDensity) -> np.ndarray:
    c = density.coeffs.T
    out = np.zeros((c.shape[0] + 2, c.shape[1]))
    out[1:-1] = c
    return out


class PotentialEvaluator:
    """Cached geometry for repeated evaluations on one mesh/density pair."""

    def __init__(self, mesh: SurfaceMesh, density: SpaceTimeDensity, reg_order: int = 8):
        if density.n_nodes != mesh.n_vertices:
            raise ValueError("density does not live on this mesh")
        self.mesh = mesh
        self.density = density
        self.dt = density.grid.dt
        self.corners, self.normals, self.grads = _triangle_geometry(mesh)
        self.tri_nodes = np.ascontiguousarray(mesh.triangles)
        self.psi = _padded_psi(density)
        self.gx, self.gw = gauss_legendre(reg_order)

    def _run(self, points, steps, r0, mode):
        points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        steps = np.ascontiguousarray(np.atleast_1d(steps), dtype=np.int64)
        out = np.zeros((len(points), len(steps), 3))
        if len(points) and len(steps) and steps.max() >= 1:
            _kernels.potential_at_times(points, steps, float(r0), self.corners, self.normals, self.grads,
                                        self.tri_nodes, self.dt, self.psi, self.gx, self.gw, mode, out)
        return out / FOUR_PI

    def at_steps(self, points, steps, r0: float = 0.0) -> np.ndarray:
        """Potential at times steps * dt + r0, shape (P, S)."""
        return self._run(points, steps, r0, _kernels.MODE_POTENTIAL)[:, :, 0]

    def grad_at_steps(self, points, steps, r0: float = 0.0) -> np.ndarray:
        """Full spatial gradient at times steps * dt + r0, shape (P, S, 3)."""
        return self._run(points, steps, r0, _kernels.MODE_GRADIENT)

    def at_time(self, points, t: float) -> np.ndarray:
        if t <= 0:
            return np.zeros(len(np.atleast_2d(points)))
        n = int(np.ceil(t / self.dt - 1e-13))
        r0 = t - n * self.dt
        return self.at_steps(points, [n], r0)[:, 0]

    def grad_at_time(self, points, t: float) -> np.ndarray:
        if t <= 0:
            return np.zeros((len(np.atleast_2d(points)), 3))
        n = int(np.ceil(t / self.dt - 1e-13))
        r0 = t - n * self.dt
        return self.grad_at_steps(points, [n], r0)[:, 0]

    def interval_integral(self, points, n: int) -> np.ndarray:
        """int_{I_n} V psi(t, x) dt for each point (exact in time)."""
        points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        out = np.zeros(len(points))
        _kernels.potential_interval_integral(points, int(n), self.corners, self.normals, self.grads,
                                             self.tri_nodes, self.dt, self.psi, self.gx, self.gw, out)
        return out / FOUR_PI


def eval_potential(mesh: SurfaceMesh, density: SpaceTimeDensity, t: float, x) -> np.ndarray:
    """V psi(t, x) at one or more points x (shape (P, 3) or (3,))."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return PotentialEvaluator(mesh, density).at_time(x, t)


def _check_interior(mesh: SurfaceMesh, tri, bary):
    bary = np.atleast_2d(np.asarray(bary, dtype=float))
    tri = np.atleast_1d(np.asarray(tri, dtype=np.int64))
    if np.any(bary <= _EDGE_TOL) or np.any(np.abs(bary.sum(axis=1) - 1) > 1e-12):
        raise EdgePointError("evaluation points must lie strictly inside their triangles")
    pos = np.einsum("pv,pvc->pc", bary, mesh.vertices[mesh.triangles[tri]])
    return tri, bary, pos


def tangential_projection(normals: np.ndarray, v: np.ndarray) -> np.ndarray:
    """P v = v - n (n . v) row by row."""
    return v - normals * np.einsum("...c,...c->...", normals, v)[..., None]


def eval_residual(mesh, density, rhs, t: float, tri, bary, evaluator: PotentialEvaluator | None = None):
    """R(t, x) = dtf(t, x) - V psi(t, x) at surface points."""
    tri, bary, pos = _check_interior(mesh, tri, bary)
    ev = evaluator or PotentialEvaluator(mesh, density)
    return np.asarray(rhs.dtf(t, pos)) - ev.at_time(pos, t)


def eval_dt_residual(mesh, density, rhs, n: int, tri, bary, evaluator: PotentialEvaluator | None = None):
    """Backward difference (R(t_n) - R(t_{n-1})) / dt."""
    if n < 1:
        raise ValueError("n must be >= 1")
    dt = density.grid.dt
    ev = evaluator or PotentialEvaluator(mesh, density)
    r1 = eval_residual(mesh, density, rhs, n * dt, tri, bary, ev)
    r0 = eval_residual(mesh, density, rhs, (n - 1) * dt, tri, bary, ev)
    return (r1 - r0) / dt


def eval_grad_residual(mesh, density, rhs, t: float, tri, bary, evaluator: PotentialEvaluator | None = None):
    """Tangential gradient P(grad dtf - grad V psi) at surface points, shape (P, 3)."""
    tri, bary, pos = _check_interior(mesh, tri, bary)
    ev = evaluator or PotentialEvaluator(mesh, density)
    g = np.asarray(rhs.grad_dtf(t, pos)) - ev.grad_at_time(pos, t)
    return tangential_projection(mesh.normals[tri], g)
