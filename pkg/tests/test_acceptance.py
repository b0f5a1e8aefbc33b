"""Acceptance criteria of the package, one test per criterion.

Every test records a PASS/FAIL line before asserting; the lines are printed
in the terminal summary (see conftest.py).  The long studies are marked slow.
"""

import csv
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import integrate

import oracles
from conftest import ACCEPTANCE_LINES
from tdbem.assembly import QuadratureConfig, assemble_operator, assemble_rhs_all, integrate_pairs
from tdbem.bestapprox import SingularModel, best_approx_rate, edge_model_error_exact
from tdbem.harness import StudyConfig, run_adaptive_study, run_uniform_study
from tdbem.mesh import SurfaceMesh, build_icosphere, build_square_screen, build_triangle_screen, refine
from tdbem.potential import PotentialEvaluator, eval_grad_residual
from tdbem.rhs import get_rhs
from tdbem.solver import SpaceTimeDensity, apply, mot_solve
from tdbem.timebasis import TimeGrid

pytestmark = pytest.mark.slow

SOLVER_TOL = 1e-10


def verdict(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)
    assert ok, line


def _uniform_square_config(out_dir) -> StudyConfig:
    return StudyConfig(geometry="square", levels=(3, 6, 12), rhs="sin5_x2", T=2.5, dts=(0.1,),
                       dt_policy="fixed_nonstrict(0.1)", quad=QuadratureConfig(tol=1e-5), out_dir=str(out_dir))


@pytest.fixture(scope="module")
def uniform_square(tmp_path_factory):
    out = tmp_path_factory.mktemp("uniform_a")
    start = time.time()
    report = run_uniform_study(_uniform_square_config(out))
    return report, out / "uniform.csv", time.time() - start


# ----------------------------------------------------------------------
def test_criterion_01_causality_and_structure():
    cases = [
        (build_square_screen(2), 0.25),
        (build_icosphere(0), 0.5),
        (refine(build_square_screen(2), {0, 3}), 0.2),
        (build_triangle_screen("30-60-90", 1), 0.15),
    ]
    worst_sym = worst_toeplitz = 0.0
    leaks = 0
    quad = QuadratureConfig(near_depth=12)
    for mesh, dt in cases:
        short = assemble_operator(mesh, TimeGrid(dt, 4), quad)
        long = assemble_operator(mesh, TimeGrid(dt, 40), quad)
        scale = max(abs(b.matrix).max() for b in long.blocks if b.nnz)
        for j in range(-3, long.j_max + 6):
            m = long.block(j)
            if j <= -1 or (j - 2) * dt > mesh.diameter:
                leaks += m.count_nonzero()
            if j >= 0 and m.nnz:
                worst_sym = max(worst_sym, abs(m - m.T).max() / scale)
            d = short.block(j) - m
            if d.nnz:
                worst_toeplitz = max(worst_toeplitz, abs(d).max() / scale)
        # causality of the march: an impulse at step 5 is felt no earlier than step 5
        grid = TimeGrid(dt, 12)
        c = np.zeros((mesh.n_vertices, 12))
        c[:, 4] = 1.0
        out = apply(long, SpaceTimeDensity(c, grid))
        leaks += int(np.count_nonzero(out[:4]))
    ok = leaks == 0 and worst_sym <= 1e-12 and worst_toeplitz <= 1e-12
    verdict(1, ok, f"nonzeros outside causal band {leaks}, asymmetry {worst_sym:.1e}, "
                   f"horizon dependence {worst_toeplitz:.1e} (bound 1e-12)")


# ----------------------------------------------------------------------
def _random_triangle(rng):
    while True:
        P = rng.uniform(0.0, 0.3, size=(3, 3))
        if 0.5 * np.linalg.norm(np.cross(P[1] - P[0], P[2] - P[0])) > 0.01:
            return P


def _pair_values(vertices, triangles, pair, dt, quad):
    mesh = SurfaceMesh(vertices, np.array(triangles))
    kmin, vals = integrate_pairs(mesh, dt, np.array([pair]), quad)
    return kmin[0], vals[0]


def test_criterion_02_quadrature_oracle():
    rng = np.random.default_rng(2)
    quad = QuadratureConfig(tol=1e-9, near_depth=12)
    dt = 0.1
    start = time.time()
    worst_sep = 0.0
    for _ in range(10):
        X = _random_triangle(rng)
        Y = _random_triangle(rng) + np.array([0.5, 0.0, 0.0])
        kmin, vals = _pair_values(np.vstack([X, Y]), [[0, 1, 2], [3, 4, 5]], [0, 1], dt, quad)
        peak = np.abs(vals).max()
        candidates = [jj for jj in range(vals.shape[0]) if np.abs(vals[jj]).max() > 0.1 * peak]
        jj = int(rng.choice(candidates))
        l, i = (int(v) for v in rng.integers(0, 3, size=2))
        ref = oracles.pair_entries(X, Y, dt, [kmin + jj], rtol=3e-6, outer_order=4, inner=(10, 8, 2))[0, l, i]
        worst_sep = max(worst_sep, abs(vals[jj, l, i] - ref) / abs(ref))
    # edge-adjacent and coincident pairs
    V = np.array([[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [0.1, 0.25, 0.0], [0.2, -0.2, 0.05]])
    near = []
    for tris, pair in (([[0, 1, 2], [1, 0, 3]], [0, 1]), ([[0, 1, 2]], [0, 0])):
        kmin, vals = _pair_values(V, tris, pair, dt, quad)
        X, Y = V[tris[pair[0]]], V[tris[pair[1]]]
        lags = kmin + np.arange(vals.shape[0])
        ref = oracles.pair_entries(X, Y, dt, lags, rtol=1e-3, outer_order=4, inner=(8, 6, 2))
        big = np.abs(ref) > 0.1 * np.abs(ref).max()
        near.append(float((np.abs(vals - ref)[big] / np.abs(ref)[big]).max()))
    elapsed = time.time() - start
    ok = worst_sep <= 1e-6 and max(near) <= 1e-3
    verdict(2, ok, f"separated max rel err {worst_sep:.1e} (bound 1e-6), adjacent {near[0]:.1e}, "
                   f"coincident {near[1]:.1e} (bound 1e-3), {elapsed:.0f}s")


# ----------------------------------------------------------------------
def test_criterion_03_solver_round_trip():
    rng = np.random.default_rng(3)
    worst = 0.0
    for mesh, dt, n_t in ((build_icosphere(2), 0.2, 50), (build_square_screen(12), 0.08, 50),
                          (build_icosphere(1), 0.3, 20)):
        op = assemble_operator(mesh, dt, QuadratureConfig(near_depth=10))
        b = rng.normal(size=(n_t, mesh.n_vertices))
        back = apply(op, mot_solve(op, b, TimeGrid(dt, n_t), residual_tol=SOLVER_TOL))
        worst = max(worst, np.abs(back - b).max() / np.abs(b).max())
    verdict(3, worst <= 1e-8, f"max relative round-trip error {worst:.1e} (bound 1e-8), up to 320 triangles, N_t 50")


# ----------------------------------------------------------------------
def _light_cone_margin(mesh, x, t, dt):
    """Smallest gap between |x - boundary of any triangle| and a light-cone radius t - m dt."""
    radii = t - dt * np.arange(0, int(t / dt) + 1)
    radii = radii[radii > 0]
    dists = []
    for a, b in mesh.edges:
        p, q = mesh.vertices[a], mesh.vertices[b]
        s = np.clip(np.dot(x - p, q - p) / np.dot(q - p, q - p), 0.0, 1.0)
        dists.append(np.linalg.norm(x - (p + s * (q - p))))
        dists.append(np.linalg.norm(x - p))
    dists = np.array(dists)
    return np.abs(dists[:, None] - radii[None, :]).min()


def test_criterion_04_gradient_consistency():
    mesh = build_square_screen(3)
    rhs = get_rhs("sin5_x2")
    grid = TimeGrid.from_horizon(2.0, 0.2)
    op = assemble_operator(mesh, grid, QuadratureConfig(tol=1e-8, near_depth=12))
    dens = mot_solve(op, assemble_rhs_all(mesh, grid, rhs), grid)
    ev = PotentialEvaluator(mesh, dens, reg_order=12)
    rng = np.random.default_rng(4)
    h = 1e-5
    worst, checked = 0.0, 0
    while checked < 24:
        t = float(rng.choice([0.93, 1.37, 1.71]))
        tri = int(rng.integers(mesh.n_triangles))
        bary = rng.dirichlet([2.0, 2.0, 2.0])
        if bary.min() < 0.05:
            continue
        x = bary @ mesh.vertices[mesh.triangles[tri]]
        if _light_cone_margin(mesh, x, t, grid.dt) < 0.01:
            continue
        g = eval_grad_residual(mesh, dens, rhs, t, [tri], [bary], ev)[0]
        fd = np.zeros(3)
        for axis in (0, 1):
            e = np.zeros(3)
            e[axis] = h
            pts = np.array([x + e, x - e])
            r = rhs.dtf(t, pts) - ev.at_time(pts, t)
            fd[axis] = (r[0] - r[1]) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-14))
        checked += 1
    verdict(4, worst <= 1e-3, f"max relative gradient error {worst:.1e} over {checked} points (bound 1e-3)")


# ----------------------------------------------------------------------
def test_criterion_05_galerkin_orthogonality():
    mesh = build_square_screen(1)
    rhs = get_rhs("sin5_x2")
    # dt = h_min puts every light-cone kink of the kernel on a mesh vertex
    grid = TimeGrid.from_horizon(6.0, float(mesh.h_min))
    b = assemble_rhs_all(mesh, grid, rhs, order=10)
    op = assemble_operator(mesh, grid, QuadratureConfig(tol=1e-12, near_depth=16))
    dens = mot_solve(op, b, grid, residual_tol=SOLVER_TOL)
    ev = PotentialEvaluator(mesh, dens, reg_order=20)

    def potential_moments(P):
        return np.column_stack([ev.interval_integral(P, n) for n in range(1, grid.n_steps + 1)])

    tested = np.zeros_like(b)
    for tri in mesh.triangles:
        local = oracles.adaptive_hat_moments(potential_moments, mesh.vertices[tri], atol=1e-11)
        for l in range(3):
            tested[:, tri[l]] += local[l]
    worst = np.abs(b - tested).max() / np.abs(b).max()
    verdict(5, worst <= 10 * SOLVER_TOL,
            f"max |int int xi_k R| / max |b| = {worst:.1e} (bound {10 * SOLVER_TOL:.0e}), "
            f"{grid.n_steps} steps x {mesh.n_vertices} nodes")


# ----------------------------------------------------------------------
def test_criterion_06_uniform_rate(uniform_square):
    report, _, elapsed = uniform_square
    rate = report.rates["eta_total"]
    etas = ", ".join(f"{r['eta_total']:.4f}" for r in report.rows)
    verdict(6, abs(rate - 0.5) <= 0.2, f"indicator rate vs h {rate:.3f} (target 0.5 +- 0.2); eta = {etas}; "
                                       f"{elapsed:.0f}s")


# ----------------------------------------------------------------------
def test_criterion_07_adaptive_improvement(uniform_square, tmp_path):
    uniform_rate = uniform_square[0].rates["eta_total"]
    cfg = StudyConfig(geometry="square", levels=(3,), rhs="sin5_x2", T=2.5, dts=(0.1,),
                      dt_policy="fixed_nonstrict(0.1)", theta=0.5, eps=1e-6, max_steps=6,
                      quad=QuadratureConfig(tol=1e-5), out_dir=str(tmp_path))
    report = run_adaptive_study(cfg)
    rate = report.rates["eta_total"]
    marked = touching = 0
    for s in report.adaptive.steps[1:4]:
        on_boundary = s.mesh.boundary_vertices
        for t in s.marked:
            marked += 1
            touching += bool(on_boundary[s.mesh.triangles[t]].any())
    share = touching / max(marked, 1)
    ok = rate >= uniform_rate + 0.1 and share >= 0.5 and len(report.rows) == 7
    verdict(7, ok, f"adaptive rate vs N^-1/2 {rate:.3f} vs uniform {uniform_rate:.3f} (need +0.1); "
                   f"{touching}/{marked} marked triangles in steps 1-3 touch the boundary (need 50%)")


# ----------------------------------------------------------------------
def test_criterion_08_sphere_indicator_decay(tmp_path):
    cfg = StudyConfig(geometry="sphere", levels=(1, 2), rhs="sin5_x2", T=2.5, dts=(0.4, 0.2), reference_level=3,
                      quad=QuadratureConfig(tol=1e-5), out_dir=str(tmp_path))
    report = run_uniform_study(cfg)
    eta = [r["eta_total"] for r in report.rows]
    energy = [r["energy_proxy"] for r in report.rows]
    rate = math.log2(eta[0] / eta[1])
    eff = [a / b for a, b in zip(eta, energy)]
    spread = max(eff) / min(eff)
    ok = abs(rate - 0.9) <= 0.3 and spread <= 2.0
    verdict(8, ok, f"per-halving indicator rate {rate:.3f} (target 0.9 +- 0.3); efficiency indices "
                   f"{eff[0]:.3f}, {eff[1]:.3f}, ratio {spread:.2f} (bound 2)")


# ----------------------------------------------------------------------
def test_criterion_09_best_approximation_oracle():
    worst = 0.0
    for nu in (0.6, 0.75, 1.5, 2.5):
        for h in (1.0, 0.25, 1e-2, 1e-4):
            a = nu - 1.0
            mean = integrate.quad(lambda y: y**a, 0, h, epsabs=0, epsrel=1e-13, limit=200)[0] / h
            ref = integrate.quad(lambda y: (y**a - mean) ** 2, 0, h, epsabs=0, epsrel=1e-13, limit=200)[0]
            worst = max(worst, abs(edge_model_error_exact(nu, h) - ref) / ref)
    edge_levels = [1 << k for k in range(10, 17)]
    s1 = best_approx_rate(SingularModel("edge", 1.5), edge_levels)
    s2 = best_approx_rate(SingularModel("edge", 0.75), edge_levels)
    s3 = best_approx_rate(SingularModel("corner", 2.0 / 3.0), range(2, 7))
    ok = worst <= 1e-10 and abs(s1 - 1.0) <= 0.05 and abs(s2 - 0.25) <= 0.05 and abs(s3 - 2 / 3) <= 0.1
    verdict(9, ok, f"formula vs quadrature {worst:.1e} (bound 1e-10); slopes {s1:.3f} (1 +- 0.05), "
                   f"{s2:.3f} (0.25 +- 0.05), {s3:.3f} (2/3 +- 0.1)")


# ----------------------------------------------------------------------
_CHILD = """
import json, sys
from tdbem.assembly import QuadratureConfig
from tdbem.harness import StudyConfig, run_uniform_study
cfg = StudyConfig(geometry="square", levels=(3, 6, 12), rhs="sin5_x2", T=2.5, dts=(0.1,),
                  dt_policy="fixed_nonstrict(0.1)", quad=QuadratureConfig(tol=1e-5), out_dir=sys.argv[1])
run_uniform_study(cfg)
"""


def _read_values(path):
    with open(path) as fh:
        return np.array([[float(v) for v in row] for row in list(csv.reader(fh))[1:]])


def test_criterion_10_determinism(uniform_square, tmp_path):
    _, first_csv, _ = uniform_square
    run_uniform_study(_uniform_square_config(tmp_path / "again"))
    identical = first_csv.read_bytes() == (tmp_path / "again" / "uniform.csv").read_bytes()
    env = dict(os.environ, NUMBA_NUM_THREADS="2", PYTHONWARNINGS="ignore")
    done = subprocess.run([sys.executable, "-c", _CHILD, str(tmp_path / "threads")], env=env,
                          capture_output=True, text=True)
    if done.returncode != 0:
        verdict(10, False, f"two-thread run failed: {done.stderr[-300:]}")
    a = _read_values(first_csv)
    b = _read_values(tmp_path / "threads" / "uniform.csv")
    finite = np.isfinite(a)
    same_nan = bool(np.array_equal(finite, np.isfinite(b)))
    rel = float(np.max(np.abs(a[finite] - b[finite]) / np.maximum(np.abs(a[finite]), 1e-300)))
    ok = identical and same_nan and rel <= 1e-12
    verdict(10, ok, f"repeat run byte-identical: {identical}; 1 vs 2 threads max relative difference {rel:.1e} "
                    f"(bound 1e-12)")
