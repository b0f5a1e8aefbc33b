"""Convergence studies: uniform and adaptive runs, reference-relative error proxies, rate reports."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .adapt import AdaptConfig, DtPolicy, REPORT_COLUMNS, choose_dt, run_adaptive, solve_on, write_report_csv
from .assembly import BlockToeplitzOperator, QuadratureConfig
from .bestapprox import DegenerateFitError, fit_rate
from .estimator import compute_indicators
from .mesh import SurfaceMesh, build_geometry, prolongation_matrix
from .potential import PotentialEvaluator
from .rhs import get_rhs
from .solver import SpaceTimeDensity, apply
from .timebasis import TimeGrid

logger = logging.getLogger(__name__)

GEOMETRIES = ("sphere", "square", "tri45", "tri3060")
RATE_COLUMNS = ("eta_total", "energy_proxy", "pressure_l2")


class EnergyProxyWarning(UserWarning):
    """The discrete energy of an error came out negative and was clamped to zero."""


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------
def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


CONFIG_KEYS = ("geometry", "level", "rhs", "T", "dt", "dt_policy", "theta", "eps", "max_steps",
               "quad.far_order", "quad.near_depth", "quad.tol", "reference_level", "reference_dt", "out_dir")


@dataclass(frozen=True)
class StudyConfig:
    """Everything a solve, adaptive run or convergence study needs.

    ``levels`` and ``dts`` are parallel lists for uniform studies (a single
    dt is broadcast); adaptive runs start from ``levels[0]``.  ``dt_policy``
    overrides ``dts`` when set.
    """

    geometry: str = "square"
    levels: tuple[int, ...] = (3,)
    rhs: str = "sin5_x2"
    T: float = 2.5
    dts: tuple[float, ...] = (0.1,)
    dt_policy: str | None = None
    theta: float = 0.5
    eps: float = 1e-3
    max_steps: int = 6
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)
    reference_level: int | None = None
    reference_dt: float | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.levels:
            raise ValueError("at least one level is required")
        if len(self.dts) not in (1, len(self.levels)):
            raise ValueError("give one dt or one dt per level")
        if any(not d > 0 for d in self.dts):
            raise ValueError("time steps must be positive")
        if self.reference_level is not None and self.reference_level <= max(self.levels):
            raise ValueError("reference level must be finer than every study level")
        get_rhs(self.rhs)

    @classmethod
    def from_mapping(cls, cfg: dict[str, str]) -> "StudyConfig":
        kw: dict = {}
        if "geometry" in cfg:
            kw["geometry"] = cfg["geometry"]
        if "level" in cfg:
            kw["levels"] = tuple(_ints(cfg["level"]))
        if "rhs" in cfg:
            kw["rhs"] = cfg["rhs"]
        if "T" in cfg:
            kw["T"] = float(cfg["T"])
        if "dt" in cfg:
            kw["dts"] = tuple(_floats(cfg["dt"]))
        if "dt_policy" in cfg:
            kw["dt_policy"] = cfg["dt_policy"]
        for key, conv in (("theta", float), ("eps", float), ("max_steps", int), ("reference_dt", float)):
            if key in cfg:
                kw[key] = conv(cfg[key])
        if "reference_level" in cfg:
            kw["reference_level"] = int(cfg["reference_level"])
        if "out_dir" in cfg:
            kw["out_dir"] = cfg["out_dir"]
        quad = {}
        for key, conv in (("far_order", int), ("near_depth", int), ("tol", float)):
            if f"quad.{key}" in cfg:
                quad[key] = conv(cfg[f"quad.{key}"])
        if quad:
            kw["quad"] = QuadratureConfig(**quad)
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "StudyConfig":
        return cls.from_mapping(parse_config_text(Path(path).read_text()))

    def dt_for(self, i: int) -> float:
        return self.dts[0] if len(self.dts) == 1 else self.dts[i]

    def policy_for(self, i: int) -> DtPolicy:
        if self.dt_policy:
            return DtPolicy.parse(self.dt_policy, self.dt_for(i))
        return DtPolicy("fixed", self.dt_for(i), True)

    @property
    def ref_dt(self) -> float:
        """Reference time step; by default the dt sequence is continued geometrically."""
        if self.reference_dt is not None:
            return self.reference_dt
        if len(self.dts) >= 2:
            return self.dts[-1] ** 2 / self.dts[-2]
        return self.dts[-1]

    def adapt_config(self) -> AdaptConfig:
        return AdaptConfig(theta=self.theta, eps=self.eps, max_steps=self.max_steps,
                           dt_policy=self.policy_for(0), T=self.T, quad=self.quad, out_dir=self.out_dir)


# ----------------------------------------------------------------------
# error proxies
# ----------------------------------------------------------------------
def _locate_p1(coarse: SurfaceMesh, points: np.ndarray) -> sp.csr_matrix:
    """Interpolation matrix of coarse P1 functions at ``points`` via the nearest coarse triangle."""
    P = coarse.vertices[coarse.triangles]
    a, e1, e2 = P[:, 0], P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    det = g11 * g22 - g12 * g12
    rows, cols, vals = [], [], []
    for p, x in enumerate(points):
        d = x - a
        r1 = np.einsum("ij,ij->i", d, e1)
        r2 = np.einsum("ij,ij->i", d, e2)
        s = (g22 * r1 - g12 * r2) / det
        t = (g11 * r2 - g12 * r1) / det
        s = np.clip(s, 0.0, 1.0)
        t = np.clip(t, 0.0, 1.0 - s)
        proj = a + s[:, None] * e1 + t[:, None] * e2
        k = int(np.argmin(np.einsum("ij,ij->i", proj - x, proj - x)))
        lam = (1.0 - s[k] - t[k], s[k], t[k])
        for v, w in zip(coarse.triangles[k], lam):
            rows.append(p)
            cols.append(v)
            vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(points), coarse.n_vertices))


def space_prolongation(coarse: SurfaceMesh, fine: SurfaceMesh) -> sp.csr_matrix:
    """Nodal P1 prolongation; uses the refinement genealogy when the meshes are nested."""
    try:
        return prolongation_matrix(coarse, fine)
    except ValueError:
        return _locate_p1(coarse, fine.vertices)


def time_reexpansion(coarse: TimeGrid, fine: TimeGrid) -> np.ndarray:
    """Matrix (fine N_t, coarse N_t) of the L2 projection of coarse pulses onto fine pulses.

    Entry (k, m) is |I_k^fine intersected with I_m^coarse| / dt_fine; for nested
    grids every row has a single 1.  Fine intervals past the coarse horizon
    get zero rows.
    """
    kf = np.arange(fine.n_steps)
    lo_f, hi_f = kf * fine.dt, (kf + 1) * fine.dt
    mc = np.arange(coarse.n_steps)
    lo_c, hi_c = mc * coarse.dt, (mc + 1) * coarse.dt
    overlap = np.minimum(hi_f[:, None], hi_c[None, :]) - np.maximum(lo_f[:, None], lo_c[None, :])
    return np.maximum(overlap, 0.0) / fine.dt


def interpolate_density(density: SpaceTimeDensity, coarse: SurfaceMesh, fine: SurfaceMesh,
                        fine_grid: TimeGrid) -> SpaceTimeDensity:
    """Coarse density expressed in the fine space-time discretization."""
    if density.n_nodes != coarse.n_vertices:
        raise ValueError("density does not live on the coarse mesh")
    Ps = space_prolongation(coarse, fine)
    Pt = time_reexpansion(density.grid, fine_grid)
    return SpaceTimeDensity(np.asarray(Ps @ density.coeffs) @ Pt.T, fine_grid)


def energy_proxy(fine_op: BlockToeplitzOperator, reference: SpaceTimeDensity,
                 interpolated: SpaceTimeDensity) -> float:
    """sqrt(sum_n e^n . (A e)^n) for e = reference - interpolated; negative values clamp to 0."""
    if reference.grid != interpolated.grid:
        raise ValueError("reference and interpolated densities live on different time grids")
    if reference.n_nodes != interpolated.n_nodes:
        raise ValueError("reference and interpolated densities live on different meshes")
    e = reference - interpolated
    val = float(np.sum(e.coeffs.T * apply(fine_op, e)))
    if val < 0:
        warnings.warn(f"negative discrete energy {val:.3e} clamped to 0", EnergyProxyWarning, stacklevel=2)
        return 0.0
    return math.sqrt(val)


def pressure_L2_error(mesh: SurfaceMesh, density: SpaceTimeDensity, ref_mesh: SurfaceMesh,
                      reference: SpaceTimeDensity, sample_points, times) -> float:
    """Root mean square over points x times of the difference of the two potentials."""
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    times = np.asarray(times, dtype=float)
    a = PotentialEvaluator(mesh, density)
    b = PotentialEvaluator(ref_mesh, reference)
    diff = np.array([a.at_time(pts, t) - b.at_time(pts, t) for t in times])
    return float(np.sqrt(np.mean(diff**2))) if diff.size else 0.0


def default_sample_points(mesh: SurfaceMesh) -> np.ndarray:
    """Six points on the axes at 1.5 times the geometry's radius from its centre (off any screen)."""
    c = 0.5 * (mesh.vertices.min(axis=0) + mesh.vertices.max(axis=0))
    r = 0.5 * mesh.diameter
    e = np.vstack([np.eye(3), -np.eye(3)])
    return c + 1.5 * max(r, 1e-12) * e


# ----------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------
@dataclass
class RateReport:
    """Study rows (CSV columns) and fitted rates per error column.

    ``axis`` is ``"h"`` (uniform, fitted against h_max) or ``"dof"`` (adaptive,
    fitted against N_nodes^(-1/2)).  Rates that cannot be fitted are NaN and
    their column is listed in ``degenerate``.
    """

    rows: list[dict]
    axis: str
    rates: dict[str, float] = field(default_factory=dict)
    degenerate: list[str] = field(default_factory=list)
    sizes: list[float] = field(default_factory=list)
    adaptive: object = None

    @property
    def degenerate_fit(self) -> bool:
        return "eta_total" in self.degenerate

    def fit(self) -> "RateReport":
        self.rates, self.degenerate = {}, []
        for col in RATE_COLUMNS:
            vals = [r.get(col, float("nan")) for r in self.rows]
            try:
                self.rates[col] = fit_rate(self.sizes, vals)
            except DegenerateFitError:
                self.rates[col] = float("nan")
                self.degenerate.append(col)
        return self

    def write_csv(self, path) -> None:
        write_report_csv(self.rows, path)


@dataclass
class _Level:
    mesh: SurfaceMesh
    density: SpaceTimeDensity
    grid: TimeGrid


class _Reference:
    """Overkill solution and operator, computed once per study."""

    def __init__(self, config: StudyConfig, rhs):
        self.mesh = build_geometry(config.geometry, config.reference_level)
        self.grid = TimeGrid.from_horizon(config.T, config.ref_dt)
        logger.info("reference solve: %s level %d, %d triangles, dt=%g", config.geometry,
                    config.reference_level, self.mesh.n_triangles, config.ref_dt)
        self.op, self.density = solve_on(self.mesh, self.grid, rhs, config.quad)
        self.points = default_sample_points(self.mesh)

    def errors(self, level: _Level) -> tuple[float, float]:
        interp = interpolate_density(level.density, level.mesh, self.mesh, self.grid)
        e = energy_proxy(self.op, self.density, interp)
        times = self.grid.times[1:]
        times = times[times <= min(level.grid.T, self.grid.T) + 1e-12]
        p = pressure_L2_error(level.mesh, level.density, self.mesh, self.density, self.points, times)
        return e, p


def _row(step, mesh, grid, table, energy=float("nan"), pressure=float("nan")) -> dict:
    return {"step": step, "n_tri": mesh.n_triangles, "n_nodes": mesh.n_vertices, "h_min": mesh.h_min,
            "dt": grid.dt, "eta_total": table.total, "eta_grad": table.total_grad,
            "eta_time": table.total_time, "energy_proxy": energy, "pressure_l2": pressure}


def run_uniform_study(config: StudyConfig) -> RateReport:
    """Solve and estimate on every level; rates are fitted against h_max."""
    if len(config.levels) < 2:
        raise ValueError("a uniform study needs at least two levels")
    rhs = get_rhs(config.rhs)
    ref = _Reference(config, rhs) if config.reference_level is not None else None
    rows, sizes = [], []
    for i, lev in enumerate(config.levels):
        mesh = build_geometry(config.geometry, lev)
        dt = choose_dt(mesh, config.policy_for(i))
        grid = TimeGrid.from_horizon(config.T, dt)
        _, density = solve_on(mesh, grid, rhs, config.quad)
        table = compute_indicators(mesh, density, rhs, reg_order=config.quad.reg_order)
        e, p = ref.errors(_Level(mesh, density, grid)) if ref else (float("nan"), float("nan"))
        logger.info("level %s: %d triangles, eta=%.4e, energy=%.4e, pressure=%.4e",
                    lev, mesh.n_triangles, table.total, e, p)
        rows.append(_row(i, mesh, grid, table, e, p))
        sizes.append(mesh.h_max)
    report = RateReport(rows, "h", sizes=sizes).fit()
    _write(config, report, "uniform.csv")
    return report


def run_adaptive_study(config: StudyConfig) -> RateReport:
    """Adaptive loop from ``levels[0]``; rates are fitted against N_nodes^(-1/2)."""
    rhs = get_rhs(config.rhs)
    ref = _Reference(config, rhs) if config.reference_level is not None else None
    mesh0 = build_geometry(config.geometry, config.levels[0])
    adapt_cfg = config.adapt_config()
    if config.out_dir:
        adapt_cfg = replace(adapt_cfg, out_dir=str(Path(config.out_dir) / "adaptive"))
    result = run_adaptive(mesh0, adapt_cfg, rhs)
    rows, sizes = [], []
    for s in result.steps:
        e, p = ref.errors(_Level(s.mesh, s.density, s.grid)) if ref else (float("nan"), float("nan"))
        rows.append(_row(s.step, s.mesh, s.grid, s.table, e, p))
        sizes.append(s.mesh.n_vertices ** -0.5)
    report = RateReport(rows, "dof", sizes=sizes).fit()
    report.adaptive = result
    _write(config, report, "report.csv")
    return report


def _write(config: StudyConfig, report: RateReport, name: str) -> None:
    if config.out_dir:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / name)
