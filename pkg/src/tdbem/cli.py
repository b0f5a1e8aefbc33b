"""Command line interface: ``tdbem {mesh,solve,adapt,convergence,oracle}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .bestapprox import SingularModel, best_approx_errors, edge_model_error_exact, fit_rate
from .harness import GEOMETRIES, StudyConfig, run_adaptive_study, run_uniform_study, _row
from .adapt import choose_dt, solve_on, write_report_csv
from .estimator import compute_indicators, write_indicator_csv
from .mesh import build_geometry
from .mesh_io import write_off, write_vtk
from .rhs import get_rhs
from .timebasis import TimeGrid

logger = logging.getLogger("tdbem")


def _cmd_mesh(args) -> int:
    mesh = build_geometry(args.geometry, args.level)
    write_off(mesh, args.out)
    print(f"{args.geometry} level {args.level}: {mesh.n_triangles} triangles, "
          f"{mesh.n_vertices} vertices, h in [{mesh.h_min:.4g}, {mesh.h_max:.4g}] -> {args.out}")
    return 0


def _cmd_solve(args) -> int:
    cfg = StudyConfig.from_file(args.config)
    mesh = build_geometry(cfg.geometry, cfg.levels[0])
    rhs = get_rhs(cfg.rhs)
    dt = choose_dt(mesh, cfg.policy_for(0))
    grid = TimeGrid.from_horizon(cfg.T, dt)
    _, density = solve_on(mesh, grid, rhs, cfg.quad)
    table = compute_indicators(mesh, density, rhs, reg_order=cfg.quad.reg_order)
    out = Path(cfg.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "density.npz", coeffs=density.coeffs, dt=grid.dt, n_steps=grid.n_steps)
    write_indicator_csv(table, out / "indicators_0.csv")
    write_vtk(mesh, out / "step_0.vtk", {"eta2": table.eta2_per_triangle})
    write_report_csv([_row(0, mesh, grid, table)], out / "report.csv")
    print(f"{mesh.n_triangles} triangles, {grid.n_steps} steps of dt={grid.dt:g}: "
          f"eta={table.total:.6e} (grad {table.total_grad:.6e}, time {table.total_time:.6e})")
    return 0


def _print_report(report) -> None:
    for r in report.rows:
        print(f"  step {r['step']}: n_tri={r['n_tri']} n_nodes={r['n_nodes']} dt={r['dt']:g} "
              f"eta={r['eta_total']:.6e} energy={r['energy_proxy']:.6e} pressure={r['pressure_l2']:.6e}")
    axis = "h" if report.axis == "h" else "N_nodes^(-1/2)"
    for col, rate in report.rates.items():
        note = " (degenerate fit)" if col in report.degenerate else ""
        print(f"  rate of {col} vs {axis}: {rate:.4f}{note}")


def _cmd_adapt(args) -> int:
    report = run_adaptive_study(StudyConfig.from_file(args.config))
    print("adaptive study")
    _print_report(report)
    return 0


def _cmd_convergence(args) -> int:
    report = run_uniform_study(StudyConfig.from_file(args.config))
    print("uniform study")
    _print_report(report)
    return 0


def _cmd_oracle(args) -> int:
    if args.corner is not None:
        model = SingularModel("corner", args.corner)
        levels = list(range(2, 2 + args.levels))
    else:
        model = SingularModel("edge", args.nu)
        levels = [args.base * 2**k for k in range(args.levels)]
        print(f"first-cell error^2 at h=1: {edge_model_error_exact(args.nu, 1.0):.12g}")
    sizes, errors = best_approx_errors(model, levels)
    for h, e in zip(sizes, errors):
        print(f"  h={h:.6g}  error={e:.6e}")
    if len(levels) >= 2:
        print(f"fitted slope {fit_rate(sizes, errors):.4f} (expected {model.expected_rate:.4f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdbem", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", help="write a catalog mesh as OFF")
    m.add_argument("--geometry", choices=GEOMETRIES, required=True)
    m.add_argument("--level", type=int, required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=_cmd_mesh)

    for name, func, text in (("solve", _cmd_solve, "solve once and write indicators"),
                             ("adapt", _cmd_adapt, "adaptive refinement loop"),
                             ("convergence", _cmd_convergence, "uniform convergence study")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, help="key=value configuration file")
        s.set_defaults(func=func)

    o = sub.add_parser("oracle", help="best-approximation rates of singular model functions")
    o.add_argument("--nu", type=float, default=1.5, help="edge exponent (y^(nu-1))")
    o.add_argument("--corner", type=float, default=None, help="corner exponent lambda (r^(lambda-1))")
    o.add_argument("--levels", type=int, default=5)
    o.add_argument("--base", type=int, default=1024, help="cells of the coarsest edge level")
    o.set_defaults(func=_cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else (logging.INFO if args.verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"tdbem {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
