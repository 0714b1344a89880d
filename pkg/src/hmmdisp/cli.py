"""``hmm`` command line: ``run``, ``converge`` and ``check-mesh``.

Exit codes: 0 success, 2 input error, 3 model error, 4 solver or
diagnostic failure.  ``HMM_THREADS`` caps the number of refinement levels
computed concurrently by ``converge``.
"""

import argparse
import os
import sys
import time

from . import __version__
from .config import RunConfig
from .diagnostics import (
    DiagnosticError, convergence_study, dtc_quartic_integral, energy_report, mass_ledger,
)
from .errors import (
    AdmissibilityError, CompatibilityError, HMMError, InputError, ModelError, SolverError,
)
from .io import read_mesh, write_csv, write_vtk
from .mesh import check_admissibility
from .transport import run_simulation

EXIT_OK, EXIT_INPUT, EXIT_MODEL, EXIT_SOLVER = 0, 2, 3, 4

RUN_LOG_COLUMNS = ("level", "time", "pressure_iterations", "pressure_residual", "flux_defect",
                   "transport_iterations", "transport_residual", "c_min", "c_max")
LEDGER_COLUMNS = ("level", "storage", "injected", "produced", "source", "residual",
                  "cumulative_residual")
ENERGY_COLUMNS = ("level", "time", "kinetic", "initial", "injection", "well_dissipation",
                  "diffusion_dissipation", "manufactured_work", "residual")
DTC_COLUMNS = ("level", "dt", "seminorm", "mean_pairing", "converged")


def _err(msg):
    print(f"hmm: error: {msg}", file=sys.stderr)


def _exit_code(exc):
    if isinstance(exc, (InputError, AdmissibilityError)):
        return EXIT_INPUT
    if isinstance(exc, ModelError):
        return EXIT_MODEL
    return EXIT_SOLVER


def _report(exc):
    if isinstance(exc, CompatibilityError):
        _err(f"{exc} (compatibility residual {exc.residual:.6e})")
    else:
        _err(str(exc))
    return _exit_code(exc)


def workers_from_env():
    raw = os.environ.get("HMM_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise InputError(f"HMM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise InputError(f"HMM_THREADS must be a positive integer, got {raw!r}")
    return n


def _echo(cfg, path, command):
    with open(path, "w") as fh:
        fh.write(f"# hmmdisp {__version__}\n# command: {command}\n")
        fh.write(cfg.text if cfg.text.endswith("\n") else cfg.text + "\n")


def cmd_run(config_path):
    cfg = RunConfig.from_file(config_path)
    mesh = cfg.build_mesh()
    scenario = cfg.build_scenario()
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    _echo(cfg, os.path.join(out, "config_echo.txt"), "run")

    t0 = time.perf_counter()
    state = run_simulation(mesh, scenario, pressure_cfg=cfg.pressure_solver,
                           transport_cfg=cfg.transport_solver)
    t_run = time.perf_counter() - t0
    write_csv(os.path.join(out, "run_log.csv"), state.log, RUN_LOG_COLUMNS)

    levels = cfg.selected_levels(state.grid.N)
    if levels:
        fdir = os.path.join(out, "fields")
        os.makedirs(fdir, exist_ok=True)
        for k in levels:
            fields = {"concentration": state.c.levels[k].cell}
            if k >= 1:
                fields["pressure"] = state.pressure[k].p.cell
                fields["velocity_x"] = state.pressure[k].u[:, 0]
                fields["velocity_y"] = state.pressure[k].u[:, 1]
            write_vtk(os.path.join(fdir, f"level_{k:05d}.vtk"), mesh, fields,
                      f"{scenario.name} level {k} t={state.grid.nodes[k]:.16e}")

    failures = []
    if cfg.mass:
        ledger = mass_ledger(state)
        write_csv(os.path.join(out, "mass_ledger.csv"), ledger.rows(), LEDGER_COLUMNS)
        try:
            ledger.check()
        except DiagnosticError as exc:
            failures.append(exc)
    if cfg.energy:
        rep = energy_report(state, scenario, check=False)
        write_csv(os.path.join(out, "energy_report.csv"), rep.rows(), ENERGY_COLUMNS)
        try:
            rep.check()
        except DiagnosticError as exc:
            failures.append(exc)
    if cfg.dtc:
        est = dtc_quartic_integral(state, tol=cfg.dual_tol)
        write_csv(os.path.join(out, "dtc_trace.csv"), est.rows(), DTC_COLUMNS)
        print(f"time-derivative quartic integral: {est.value:.6e}")

    with open(os.path.join(out, "timings.txt"), "w") as fh:
        fh.write(f"total_run_seconds {t_run:.3f}\n")
        for row in state.timings:
            fh.write(f"level {row['level']} pressure {row['pressure_s']:.4f} "
                     f"transport {row['transport_s']:.4f}\n")

    c = state.c.levels[-1].cell
    print(f"{scenario.name}: {mesh.n_cells} cells, {state.grid.N} steps, "
          f"c in [{c.min():.4f}, {c.max():.4f}], outputs in {out}")
    if failures:
        for exc in failures:
            _err(str(exc))
        return EXIT_SOLVER
    return EXIT_OK


def cmd_converge(config_path, levels):
    cfg = RunConfig.from_file(config_path)
    base = cfg.build_scenario()
    if base.exact is None:
        raise InputError(f"converge needs a manufactured preset, got {cfg.preset!r}")
    workers = workers_from_env()
    meshes = [cfg.build_mesh(2 ** l) for l in range(levels)]
    grids = [cfg.build_scenario(2 ** l).grid for l in range(levels)]
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    _echo(cfg, os.path.join(out, "config_echo.txt"), f"converge --levels {levels}")
    path = os.path.join(out, "convergence.csv")
    try:
        table = convergence_study(base, meshes, grids, workers=workers,
                                  pressure_cfg=cfg.pressure_solver,
                                  transport_cfg=cfg.transport_solver)
    except HMMError as exc:
        partial = getattr(exc, "table", None)
        if partial is not None:
            partial.to_csv(path)
        raise
    table.to_csv(path)
    print(f"{'h':>12} {'err_c_unif':>12} {'order':>7} {'err_u':>12} {'order':>7} "
          f"{'err_p':>12} {'order':>7}")
    for r in table.rows:
        print(f"{r['h']:12.4e} {r['err_c_uniform']:12.4e} {r['order_c_uniform']:7.3f} "
              f"{r['err_u']:12.4e} {r['order_u']:7.3f} {r['err_p']:12.4e} {r['order_p']:7.3f}")
    print(f"table written to {path}")
    return EXIT_OK


def cmd_check_mesh(path):
    mesh = read_mesh(path, validate=False)
    try:
        q = check_admissibility(mesh)
    except AdmissibilityError as exc:
        for issue in exc.issues:
            print(f"  {issue}")
        _err(f"{path}: mesh is not admissible ({len(exc.issues)} issue(s))")
        return EXIT_INPUT
    print(f"{path}: admissible")
    print(f"  cells {mesh.n_cells}, edges {mesh.n_edges}, vertices {len(mesh.vertices)}")
    for k, v in q.as_dict().items():
        print(f"  {k} {v:.6g}")
    return EXIT_OK


def _levels(text):
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid level count {text!r}") from None
    if n < 3:
        raise argparse.ArgumentTypeError("a refinement study needs at least 3 levels")
    return n


def build_parser():
    p = argparse.ArgumentParser(prog="hmm", description="Hybrid mimetic miscible displacement "
                                "solver and discrete diagnostics.")
    p.add_argument("--version", action="version", version=f"hmm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one simulation and write fields and reports")
    r.add_argument("config")
    c = sub.add_parser("converge", help="mesh/time refinement study on a manufactured preset")
    c.add_argument("config")
    c.add_argument("--levels", type=_levels, default=4, help="number of levels (>= 3)")
    m = sub.add_parser("check-mesh", help="parse a mesh file and report admissibility")
    m.add_argument("path")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config)
        if args.command == "converge":
            return cmd_converge(args.config, args.levels)
        return cmd_check_mesh(args.path)
    except HMMError as exc:
        return _report(exc)
    except OSError as exc:
        _err(str(exc))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
