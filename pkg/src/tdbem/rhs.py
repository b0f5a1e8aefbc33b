"""Dirichlet data catalog with analytic time derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class DirichletData:
    """Boundary data f(t, x) with analytic dtf and its spatial gradient.

    All callables take a scalar time and an (P, 3) array of points.
    """

    name: str
    f: Callable
    dtf: Callable
    grad_dtf: Callable


def _sin5_x2():
    def f(t, X):
        X = np.atleast_2d(X)
        return np.sin(t) ** 5 * X[:, 0] ** 2

    def dtf(t, X):
        X = np.atleast_2d(X)
        return 5.0 * np.sin(t) ** 4 * np.cos(t) * X[:, 0] ** 2

    def grad_dtf(t, X):
        X = np.atleast_2d(X)
        g = np.zeros_like(X, dtype=float)
        g[:, 0] = 10.0 * np.sin(t) ** 4 * np.cos(t) * X[:, 0]
        return g

    return DirichletData("sin5_x2", f, dtf, grad_dtf)


def _sin5():
    def f(t, X):
        return np.full(len(np.atleast_2d(X)), np.sin(t) ** 5)

    def dtf(t, X):
        return np.full(len(np.atleast_2d(X)), 5.0 * np.sin(t) ** 4 * np.cos(t))

    def grad_dtf(t, X):
        return np.zeros_like(np.atleast_2d(X), dtype=float)

    return DirichletData("sin5", f, dtf, grad_dtf)


def _zero():
    def zero(t, X):
        return np.zeros(len(np.atleast_2d(X)))

    def zero_grad(t, X):
        return np.zeros_like(np.atleast_2d(X), dtype=float)

    return DirichletData("zero", zero, zero, zero_grad)


RHS_CATALOG = {"sin5_x2": _sin5_x2(), "sin5": _sin5(), "zero": _zero()}


def get_rhs(name: str) -> DirichletData:
    try:
        return RHS_CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown rhs {name!r}; choose from {sorted(RHS_CATALOG)}") from None
