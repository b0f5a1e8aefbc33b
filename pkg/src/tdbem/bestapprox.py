"""Best approximation of singular model functions by piecewise constants.

Near an edge of a screen the density behaves like ``y^(nu - 1)`` in the
distance ``y`` to the edge; near a corner like ``r^(lambda - 1)``.  This
module computes the L2 error of the piecewise constant best approximation
(the elementwise mean) of these models on uniform meshes, exactly or with
quadrature that is exact up to round-off, and fits algebraic rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quadrature import gauss_legendre


class DegenerateFitError(ValueError):
    """Too few points or nonpositive data for a log-log fit."""


@dataclass(frozen=True)
class SingularModel:
    """``edge``: y^(nu-1) on [0, 1]; ``corner``: r^(lambda-1) on the unit quarter disk."""

    kind: str
    exponent: float

    def __post_init__(self):
        if self.kind not in ("edge", "corner"):
            raise ValueError(f"kind must be 'edge' or 'corner', got {self.kind!r}")
        if self.kind == "edge" and not self.exponent > 0.5:
            raise ValueError("edge model needs nu > 1/2 for a square-integrable function")
        if self.kind == "corner" and not self.exponent > 0:
            raise ValueError("corner model needs lambda > 0")

    @property
    def expected_rate(self) -> float:
        if self.kind == "edge":
            return min(self.exponent - 0.5, 1.0)
        return min(self.exponent, 1.0)


def edge_model_error_exact(nu: float, h: float) -> float:
    """Squared L2 error of y^(nu-1) minus its mean on (0, h).

    With a = nu - 1 this is h^(2a+1) [1/(2a+1) - 1/(a+1)^2] = a^2 h^(2a+1) / ((1+a)^2 (2a+1)).
    """
    if not nu > 0.5:
        raise ValueError("nu must exceed 1/2")
    if not h > 0:
        raise ValueError("h must be positive")
    a = nu - 1.0
    return a * a / ((1.0 + a) ** 2 * (2.0 * a + 1.0)) * h ** (2.0 * a + 1.0)


def _edge_element_errors(nu: float, n: int) -> np.ndarray:
    """Squared errors on the cells [j h, (j+1) h], h = 1/n.

    The first cell is done in closed form.  On the others y^(nu-1) is analytic
    at distance >= h from the cell, and the closed form i2 - i1^2/h would lose
    all digits to cancellation for small h, so the mean is taken in closed form
    and the squared deviation by 16-point Gauss-Legendre.
    """
    a = nu - 1.0
    h = 1.0 / n
    err = np.empty(n)
    err[0] = edge_model_error_exact(nu, h)
    if n > 1:
        gx, gw = gauss_legendre(16)
        lo = np.arange(1, n) * h
        hi = lo + h
        mean = (hi ** (a + 1) - lo ** (a + 1)) / ((a + 1) * h)
        y = lo[:, None] + h * gx[None, :]
        err[1:] = h * ((y**a - mean[:, None]) ** 2 @ gw)
    return err


def quarter_disk_mesh(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Red-refined triangulation of the unit quarter disk; arc midpoints are projected.

    Returns (vertices (V, 2), triangles (T, 3)).  The corner sits at vertex 0.
    """
    s = math.sqrt(0.5)
    V = [np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([s, s]), np.array([0.0, 1.0])]
    on_arc = [False, True, True, True]
    tris = [(0, 1, 2), (0, 2, 3)]
    for _ in range(level):
        mids: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in mids:
                m = 0.5 * (V[i] + V[j])
                arc = on_arc[i] and on_arc[j]
                if arc:
                    m = m / np.linalg.norm(m)
                V.append(m)
                on_arc.append(arc)
                mids[key] = len(V) - 1
            return mids[key]

        new = []
        for a, b, c in tris:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        tris = new
    return np.array(V), np.array(tris, dtype=np.int64)


def _radial_power_integrals(P: np.ndarray, p: float, order: int = 24) -> np.ndarray:
    """int_T r^p dA for triangles P (T, 3, 2), p > -2.

    Each triangle is the signed sum of the sectors (0, a, b) over its edges.
    On a sector int r^p dA = int R(theta)^(p+2)/(p+2) dtheta with
    R = d / cos(theta - theta0) along the edge line, integrated by
    Gauss-Legendre in theta.  Edges on lines through the origin contribute 0.
    """
    gx, gw = gauss_legendre(order)
    out = np.zeros(len(P))
    for e in range(3):
        a = P[:, e]
        b = P[:, (e + 1) % 3]
        cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        ta = np.arctan2(a[:, 1], a[:, 0])
        tb = np.arctan2(b[:, 1], b[:, 0])
        span = tb - ta
        span = (span + np.pi) % (2 * np.pi) - np.pi
        L = np.linalg.norm(b - a, axis=1)
        d = np.abs(cross) / np.where(L > 0, L, 1.0)
        ok = d > 1e-14 * np.maximum(L, 1e-300)
        # unit normal of the edge line pointing away from the origin
        nrm = np.stack([b[:, 1] - a[:, 1], a[:, 0] - b[:, 0]], axis=1) / L[:, None]
        nrm *= np.sign(np.einsum("ij,ij->i", nrm, a))[:, None]
        t0 = np.arctan2(nrm[:, 1], nrm[:, 0])
        theta = ta[:, None] + span[:, None] * gx[None, :]
        R = d[:, None] / np.cos(theta - t0[:, None])
        val = (R ** (p + 2) / (p + 2)) @ gw * span
        out += np.where(ok, val, 0.0)
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    return out * np.sign(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def corner_model_errors(lam: float, level: int) -> tuple[float, np.ndarray]:
    """(h, squared elementwise errors) of r^(lam-1) on the quarter disk mesh of ``level``."""
    V, T = quarter_disk_mesh(level)
    P = V[T]
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    i1 = _radial_power_integrals(P, lam - 1.0)
    i2 = _radial_power_integrals(P, 2.0 * lam - 2.0)
    err = np.maximum(i2 - i1 * i1 / area, 0.0)
    h = max(np.linalg.norm(P[:, i] - P[:, j], axis=1).max() for i, j in ((0, 1), (1, 2), (2, 0)))
    return float(h), err


def best_approx_errors(model: SingularModel, mesh_levels) -> tuple[np.ndarray, np.ndarray]:
    """Mesh sizes and L2 best-approximation errors per level.

    Edge levels are cell counts n (h = 1/n); corner levels are red-refinement depths.
    """
    sizes, errors = [], []
    for lev in mesh_levels:
        if model.kind == "edge":
            n = int(lev)
            if n < 1:
                raise ValueError("edge levels are positive cell counts")
            sizes.append(1.0 / n)
            errors.append(math.sqrt(_edge_element_errors(model.exponent, n).sum()))
        else:
            h, err = corner_model_errors(model.exponent, int(lev))
            sizes.append(h)
            errors.append(math.sqrt(err.sum()))
    return np.array(sizes), np.array(errors)


def best_approx_rate(model: SingularModel, mesh_levels) -> float:
    """Fitted log-log slope of the best-approximation error over at least three levels."""
    mesh_levels = list(mesh_levels)
    if len(mesh_levels) < 3:
        raise DegenerateFitError("at least three mesh levels are needed")
    return fit_rate(*best_approx_errors(model, mesh_levels))


def fit_rate(sizes, errors) -> float:
    """Least-squares slope of log(error) against log(size)."""
    s = np.asarray(sizes, dtype=float)
    e = np.asarray(errors, dtype=float)
    if s.shape != e.shape or s.ndim != 1:
        raise DegenerateFitError("sizes and errors must be 1d arrays of equal length")
    if len(s) < 2:
        raise DegenerateFitError("at least two points are needed")
    if np.any(~np.isfinite(s)) or np.any(~np.isfinite(e)) or np.any(s <= 0) or np.any(e <= 0):
        raise DegenerateFitError("sizes and errors must be positive and finite")
    x = np.log(s)
    if np.ptp(x) == 0:
        raise DegenerateFitError("all sizes are equal")
    return float(np.polyfit(x, np.log(e), 1)[0])
