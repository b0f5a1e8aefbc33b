"""Maximum marking, time-step policy and the SOLVE-ESTIMATE-MARK-REFINE loop."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import BlockToeplitzOperator, QuadratureConfig, assemble_operator, assemble_rhs_all
from .estimator import IndicatorTable, compute_indicators, write_indicator_csv
from .mesh import SurfaceMesh, refine
from .mesh_io import write_vtk
from .solver import SpaceTimeDensity, mot_solve
from .timebasis import TimeGrid

logger = logging.getLogger(__name__)


class CFLError(ValueError):
    """Configured time step exceeds the smallest triangle diameter."""


class CFLWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DtPolicy:
    """``fixed``: use ``value`` and require dt <= min h (``strict``) or only warn.

    ``cfl``: dt = ``value`` * min h with value <= 1.
    """

    kind: str
    value: float
    strict: bool = True

    def __post_init__(self):
        if self.kind not in ("fixed", "cfl"):
            raise ValueError(f"dt policy must be 'fixed' or 'cfl', got {self.kind!r}")
        if not self.value > 0:
            raise ValueError("dt policy value must be positive")
        if self.kind == "cfl" and self.value > 1:
            raise ValueError("cfl factor must be <= 1")

    @classmethod
    def parse(cls, text: str, dt: float | None = None) -> "DtPolicy":
        """'fixed', 'fixed(0.1)', 'fixed_nonstrict(0.1)', 'cfl(0.8)'."""
        text = text.strip()
        name, _, arg = text.partition("(")
        arg = arg.rstrip(")").strip()
        value = float(arg) if arg else dt
        if value is None:
            raise ValueError(f"dt policy {text!r} needs a value")
        if name == "fixed":
            return cls("fixed", value, True)
        if name == "fixed_nonstrict":
            return cls("fixed", value, False)
        if name == "cfl":
            return cls("cfl", value)
        raise ValueError(f"unknown dt policy {text!r}")


def mark(table: IndicatorTable | np.ndarray, theta: float) -> set[int]:
    """{D : eta(D) > theta * eta_max} (strict inequality)."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    if isinstance(table, IndicatorTable):
        eta = np.sqrt(table.eta2_per_triangle)
    else:
        eta = np.abs(np.asarray(table, dtype=float))
    if eta.size == 0:
        return set()
    emax = eta.max()
    if emax <= 0:
        return set()
    return {int(i) for i in np.flatnonzero(eta > theta * emax)}


def choose_dt(mesh: SurfaceMesh, policy: DtPolicy) -> float:
    if mesh.n_triangles == 0:
        raise ValueError("empty mesh")
    hmin = mesh.h_min
    if policy.kind == "cfl":
        return policy.value * hmin
    dt = policy.value
    bad = np.flatnonzero(mesh.diameters < dt)
    if len(bad):
        msg = (f"dt={dt} exceeds the diameter of {len(bad)} triangle(s) (min h={hmin:.4g}); "
               f"offending triangles: {bad[:20].tolist()}{' ...' if len(bad) > 20 else ''}")
        if policy.strict:
            raise CFLError(msg)
        warnings.warn(msg, CFLWarning, stacklevel=2)
    return dt


@dataclass(frozen=True)
class AdaptConfig:
    theta: float = 0.5
    eps: float = 1e-3
    max_steps: int = 6
    dt_policy: DtPolicy = field(default_factory=lambda: DtPolicy("cfl", 1.0))
    T: float = 2.5
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)
    out_dir: str | None = None

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if not self.T > 0:
            raise ValueError("T must be positive")


@dataclass(eq=False)
class AdaptStep:
    step: int
    mesh: SurfaceMesh
    grid: TimeGrid
    operator: BlockToeplitzOperator
    density: SpaceTimeDensity
    table: IndicatorTable
    marked: set[int]

    @property
    def row(self) -> dict:
        return {
            "step": self.step,
            "n_tri": self.mesh.n_triangles,
            "n_nodes": self.mesh.n_vertices,
            "h_min": self.mesh.h_min,
            "dt": self.grid.dt,
            "eta_total": self.table.total,
            "eta_grad": self.table.total_grad,
            "eta_time": self.table.total_time,
        }


@dataclass(eq=False)
class AdaptReport:
    steps: list[AdaptStep]
    stopped_by_tolerance: bool

    @property
    def rows(self) -> list[dict]:
        return [s.row for s in self.steps]


REPORT_COLUMNS = ["step", "n_tri", "n_nodes", "h_min", "dt", "eta_total", "eta_grad", "eta_time",
                  "energy_proxy", "pressure_l2"]


def write_report_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c, float("nan"))) for c in REPORT_COLUMNS])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def solve_on(mesh: SurfaceMesh, grid: TimeGrid, rhs, quad: QuadratureConfig):
    op = assemble_operator(mesh, grid, quad)
    b = assemble_rhs_all(mesh, grid, rhs)
    return op, mot_solve(op, b, grid)


def run_adaptive(initial_mesh: SurfaceMesh, config: AdaptConfig, rhs) -> AdaptReport:
    """Iterate SOLVE, ESTIMATE, MARK, REFINE until sum eta^2 < eps^2 or max_steps."""
    out = Path(config.out_dir) if config.out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    mesh = initial_mesh
    steps: list[AdaptStep] = []
    stopped = False
    for k in range(config.max_steps + 1):
        dt = choose_dt(mesh, config.dt_policy)
        grid = TimeGrid.from_horizon(config.T, dt)
        op, density = solve_on(mesh, grid, rhs, config.quad)
        table = compute_indicators(mesh, density, rhs, reg_order=config.quad.reg_order)
        total2 = float(np.sum(table.eta2_per_triangle))
        logger.info("adaptive step %d: %d triangles, %d nodes, eta=%.4e", k, mesh.n_triangles,
                    mesh.n_vertices, math.sqrt(total2))
        if out:
            write_vtk(mesh, out / f"step_{k}.vtk", {"eta2": table.eta2_per_triangle})
            write_indicator_csv(table, out / f"indicators_{k}.csv")
        done = total2 < config.eps**2
        marked = set() if (done or k == config.max_steps) else mark(table, config.theta)
        steps.append(AdaptStep(k, mesh, grid, op, density, table, marked))
        if done:
            stopped = True
            break
        if k == config.max_steps or not marked:
            break
        new = refine(mesh, marked)
        if new.n_triangles < mesh.n_triangles:
            raise AssertionError("refinement decreased the triangle count")
        mesh = new
    report = AdaptReport(steps, stopped)
    if out:
        write_report_csv(report.rows, out / "report.csv")
    return report
