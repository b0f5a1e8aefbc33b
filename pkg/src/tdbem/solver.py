"""Marching-on-in-time for the lower block-triangular Toeplitz system."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BlockToeplitzOperator
from .timebasis import TimeGrid

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """A^0 is singular or too ill-conditioned to march."""


@dataclass(frozen=True, eq=False)
class SpaceTimeDensity:
    """Coefficients psi_i^m of psi = sum psi_i^m chi_m(t) xi_i(x).

    ``chi_m`` is the indicator of I_m = (t_{m-1}, t_m], so psi is piecewise
    constant in time and its primitive ``phi = int_0^t psi`` is continuous and
    piecewise linear.  ``coeffs`` has shape (N_nodes, N_t); column m - 1
    holds step m.
    """

    coeffs: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 2 or c.shape[1] != self.grid.n_steps:
            raise ValueError(f"coeffs must have shape (N_nodes, {self.grid.n_steps}), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("density coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def n_nodes(self) -> int:
        return self.coeffs.shape[0]

    def step(self, m: int) -> np.ndarray:
        """psi^m (zero outside 1..N_t)."""
        if 1 <= m <= self.grid.n_steps:
            return self.coeffs[:, m - 1]
        return np.zeros(self.n_nodes)

    @classmethod
    def zeros(cls, n_nodes: int, grid: TimeGrid) -> "SpaceTimeDensity":
        return cls(np.zeros((n_nodes, grid.n_steps)), grid)

    def __add__(self, other):
        return SpaceTimeDensity(self.coeffs + other.coeffs, self.grid)

    def __sub__(self, other):
        return SpaceTimeDensity(self.coeffs - other.coeffs, self.grid)

    def scaled(self, c: float) -> "SpaceTimeDensity":
        return SpaceTimeDensity(c * self.coeffs, self.grid)


def _history(op: BlockToeplitzOperator, psi_steps: np.ndarray, n: int, first_lag: int) -> np.ndarray:
    """sum_{j >= first_lag} A^j psi^{n-j} with compensated (Kahan) summation over lags."""
    total = np.zeros(op.n_nodes)
    comp = np.zeros(op.n_nodes)
    for j in range(first_lag, min(n - 1, op.j_max) + 1):
        term = op.block(j) @ psi_steps[n - j - 1]
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


class _A0Solver:
    def __init__(self, A0: sp.csr_matrix, cond_limit: float, memory_cap: int):
        self.A0 = A0.tocsc()
        self.lu = None
        n = A0.shape[0]
        if n == 0:
            raise SolverError("empty system")
        if A0.nnz == 0:
            raise SolverError("A^0 is identically zero")
        if A0.nnz <= memory_cap:
            try:
                self.lu = spla.splu(self.A0)
            except RuntimeError as exc:
                raise SolverError(f"factorization of A^0 failed: {exc}") from exc
            inv = spla.LinearOperator(A0.shape, matvec=self.lu.solve, rmatvec=lambda v: self.lu.solve(v, trans="T"),
                                      dtype=float)
            if n <= 2:
                cond = np.linalg.cond(A0.toarray(), 1)
            else:
                cond = spla.onenormest(self.A0) * spla.onenormest(inv)
            if not np.isfinite(cond) or cond > cond_limit:
                raise SolverError(f"A^0 condition estimate {cond:.3e} exceeds {cond_limit:.1e}")
            self.cond = float(cond)
        else:
            logger.warning("A^0 has %d nonzeros above the cap %d; using preconditioned CG", A0.nnz, memory_cap)
            d = A0.diagonal()
            if np.any(d <= 0):
                raise SolverError("A^0 has a nonpositive diagonal; CG fallback impossible")
            self.precond = spla.LinearOperator(A0.shape, matvec=lambda v: v / d, dtype=float)
            self.cond = float("nan")

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.lu is not None:
            x = self.lu.solve(b)
            # one step of iterative refinement keeps the residual at round-off level
            r = b - self.A0 @ x
            return x + self.lu.solve(r)
        x, info = spla.cg(self.A0, b, rtol=1e-12, atol=0.0, M=self.precond, maxiter=10 * len(b))
        if info != 0:
            raise SolverError(f"CG did not converge (info={info})")
        return x


def mot_solve(op: BlockToeplitzOperator, rhs, grid: TimeGrid | None = None, *,
              residual_tol: float = 1e-10, cond_limit: float = 1e12,
              memory_cap: int = 50_000_000) -> SpaceTimeDensity:
    """Solve A^0 psi^n = b^n - sum_{j>=1} A^j psi^{n-j} for n = 1..N_t.

    Parameters
    ----------
    op : BlockToeplitzOperator
    rhs : array_like, shape (N_t, N_nodes)
        Right-hand side per time step.
    grid : TimeGrid, optional
        Defaults to a grid with ``op.dt`` and ``len(rhs)`` steps.
    """
    rhs = np.atleast_2d(np.asarray(rhs, dtype=float))
    if rhs.shape[1] != op.n_nodes:
        raise ValueError(f"rhs has {rhs.shape[1]} columns, operator has {op.n_nodes} nodes")
    n_t = rhs.shape[0]
    grid = grid or TimeGrid(op.dt, n_t)
    if grid.n_steps != n_t or not np.isclose(grid.dt, op.dt, rtol=1e-14, atol=0):
        raise ValueError("grid does not match the right-hand side / operator")
    solver = _A0Solver(op.block(0), cond_limit, memory_cap)
    psi = np.zeros((n_t, op.n_nodes))
    for n in range(1, n_t + 1):
        b = rhs[n - 1] - _history(op, psi, n, 1)
        if not np.any(b):
            continue
        x = solver.solve(b)
        res = np.linalg.norm(op.block(0) @ x - b) / np.linalg.norm(b)
        if res > residual_tol:
            raise SolverError(f"step {n}: relative residual {res:.2e} above {residual_tol:.0e}")
        psi[n - 1] = x
    logger.debug("MOT: %d steps, %d nodes, cond(A0)~%.3g", n_t, op.n_nodes, solver.cond)
    return SpaceTimeDensity(psi.T.copy(), grid)


def apply(op: BlockToeplitzOperator, density: SpaceTimeDensity) -> np.ndarray:
    """Forward block-Toeplitz convolution, shape (N_t, N_nodes)."""
    if density.n_nodes != op.n_nodes:
        raise ValueError(f"density has {density.n_nodes} nodes, operator has {op.n_nodes}")
    if not np.isclose(density.grid.dt, op.dt, rtol=1e-14, atol=0):
        raise ValueError("density time step differs from the operator's")
    psi = density.coeffs.T
    n_t = psi.shape[0]
    return np.stack([_history(op, psi, n, 0) for n in range(1, n_t + 1)]) if n_t else psi.copy()


def energy_form(op: BlockToeplitzOperator, density: SpaceTimeDensity) -> float:
    """sum_n psi^n . (A psi)^n, the discrete energy pairing."""
    return float(np.sum(density.coeffs.T * apply(op, density)))
