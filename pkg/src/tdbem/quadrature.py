"""Reference quadrature rules on intervals and triangles."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    if n < 1:
        raise ValueError("order must be >= 1")
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def collapsed_gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Conical product rule on the unit triangle {s, t >= 0, s + t <= 1}.

    Returns barycentric points (n^2, 3) ordered (l0, l1, l2) with the point
    ``l1 * e1 + l2 * e2`` and weights summing to 1 (area-normalized), exact
    for polynomials of degree 2n - 2.
    """
    x, w = gauss_legendre(n)
    # Duffy: s = a, t = (1 - a) b, jacobian (1 - a)
    a, b = np.meshgrid(x, x, indexing="ij")
    wa, wb = np.meshgrid(w, w, indexing="ij")
    s = a.ravel()
    t = ((1.0 - a) * b).ravel()
    weight = (wa * wb * (1.0 - a)).ravel() * 2.0
    bary = np.column_stack([1.0 - s - t, s, t])
    return np.ascontiguousarray(bary), np.ascontiguousarray(weight)


def _seven_point():
    a1 = (6.0 - np.sqrt(15.0)) / 21.0
    a2 = (6.0 + np.sqrt(15.0)) / 21.0
    w1 = (155.0 - np.sqrt(15.0)) / 1200.0
    w2 = (155.0 + np.sqrt(15.0)) / 1200.0
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [9.0 / 40.0]
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        pts += [(b, a, a), (a, b, a), (a, a, b)]
        wts += [w, w, w]
    return np.array(pts), np.array(wts)


TRIANGLE_7 = _seven_point()
"""Degree-5 interior rule: barycentric points (7, 3), weights summing to 1."""


def map_to_triangle(bary: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Barycentric points (P, 3) -> physical points (P, 3) for a (3, 3) corner array."""
    return bary @ corners
