"""Acceptance suite: one check per criterion, one PASS/FAIL line each.

Run under pytest (``pytest tests/test_acceptance.py -v``) or directly
(``python tests/test_acceptance.py``); both print the summary lines.
"""

import math
import os
import sys
import tempfile
import time

import numpy as np
import pytest

from hmmdisp.cli import main as cli_main
from hmmdisp.diagnostics import (
    cell_vector_error, convergence_study, dtc_quartic_integral, dual_seminorm, energy_report,
    mass_ledger, random_feasible_values,
)
from hmmdisp.discrete import DiscreteField, FluxField, TimeGrid, interpolate, pyramid_gradients
from hmmdisp.mesh import generate_perturbed_mesh, generate_rect_mesh, generate_tri_mesh
from hmmdisp.pressure import solve_pressure
from hmmdisp.scenarios import coupled_mms, five_spot
from hmmdisp.transport import run_simulation, upwind_form, upwind_split

PI = math.pi
_five_spot_cache = {}


def _five_spot_16():
    if "run" not in _five_spot_cache:
        t0 = time.perf_counter()
        _five_spot_cache["run"] = run_simulation(generate_rect_mesh(16, 16), five_spot(N=50))
        _five_spot_cache["seconds"] = time.perf_counter() - t0
    return _five_spot_cache["run"]


def geometric_identities():
    meshes = [generate_rect_mesh(8, 8), generate_tri_mesh(8, 8)]
    meshes += [generate_perturbed_mesh(8, 8, seed=s) for s in (1, 2, 3)]
    worst_ld = worst_ln = 0.0
    for m in meshes:
        length = m.edge_length[m.inc_edge]
        starts = m.cell_ptr[:-1]
        ld = np.add.reduceat(length * m.inc_dist, starts)
        ln = np.add.reduceat(length[:, None] * m.inc_normal, starts, axis=0)
        worst_ld = max(worst_ld, float(np.max(np.abs(ld - 2 * m.cell_area) / (2 * m.cell_area))))
        perim = np.add.reduceat(length, starts)
        worst_ln = max(worst_ln, float(np.max(np.linalg.norm(ln, axis=1) / perim)))
    ok = worst_ld < 1e-12 and worst_ln < 1e-12
    return ok, f"max rel |sum|s|d - 2|K||={worst_ld:.1e}, max rel |sum|s|n|={worst_ln:.1e}"


def gradient_affine_exactness():
    m = generate_perturbed_mesh(8, 8, seed=5)
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(5):
        a, b, c = rng.uniform(-3, 3, 3)
        v = interpolate(m, lambda p: a * p[:, 0] + b * p[:, 1] + c)
        worst = max(worst, float(np.abs(pyramid_gradients(v) - [a, b]).max()))
    return worst < 1e-11, f"max pyramid deviation {worst:.2e}"


def flux_conservativity():
    s = _five_spot_16()
    m = s.mesh
    boundary = np.isin(m.inc_edge, m.boundary_edges)
    defect = raw = bal = 0.0
    bnd_zero = True
    for ps in s.pressure[1:]:
        defect = max(defect, float(np.abs(ps.F.conservativity_defect()).max()))
        raw = max(raw, ps.raw_defect)
        bnd_zero &= not ps.F.values[boundary].any()
        qnorm = float(np.sum(m.cell_area * np.abs(ps.q_inj - ps.q_prod)))
        bal = max(bal, float(np.abs(ps.balance_residual()).max()) / qnorm)
    ok = defect < 1e-9 and raw < 1e-9 and bnd_zero and bal < 1e-8
    return ok, (f"|F_K+F_L| max {defect:.1e} (before symmetrisation {raw:.1e}), boundary "
                f"fluxes zero: {bnd_zero}, balance/||q|| {bal:.1e}, "
                f"run {_five_spot_cache['seconds']:.1f}s")


def upwind_identities():
    m = generate_rect_mesh(8, 8)
    rng = np.random.default_rng(4)
    vals = np.zeros(m.n_incidences)
    for e in m.interior_edges:
        i, j = np.flatnonzero(m.inc_edge == e)
        vals[i] = rng.standard_normal()
        vals[j] = -vals[i]
    F = FluxField(m, vals)
    c = DiscreteField(m, rng.uniform(0, 1, m.n_cells), rng.uniform(0, 1, m.n_edges))
    s = upwind_split(F)
    inner = m.inc_neighbour >= 0
    g = -vals
    split_ok = (np.array_equal((s.pos - s.neg)[inner], g[inner])
                and np.array_equal((s.pos + s.neg)[inner], np.abs(g[inner]))
                and (s.pos >= 0).all() and (s.neg >= 0).all())
    scale = float(np.abs(vals).sum() * np.abs(c.cell).max())
    one = abs(upwind_form(F, c, DiscreteField.constant(m, 1.0)))
    return split_ok and one < 1e-12 * scale, (f"split identities exact: {split_ok}, "
                                              f"|upwind(F,c,1)|/scale {one / scale:.1e}")


def mass_ledger_closes():
    led = mass_ledger(_five_spot_16())
    rel = float(led.relative.max())
    glob = abs(led.global_residual) / float(led.scale.sum())
    return rel < 1e-8 and glob < 1e-8, f"max step residual {rel:.1e}, global {glob:.1e}"


def energy_inequality():
    runs = [("five_spot 16x16", _five_spot_16())]
    for seed in (1, 2, 3):
        runs.append((f"perturbed seed {seed}",
                     run_simulation(generate_perturbed_mesh(16, 16, seed=seed), five_spot(N=50))))
    parts, ok = [], True
    for name, s in runs:
        rep = energy_report(s, check=False)
        worst = float(np.max(rep.residual[1:] / rep.scale[1:]))
        ok &= bool((rep.residual <= 1e-8 * rep.scale).all())
        parts.append(f"{name}: max residual/scale {worst:.2e}")
    return ok, "; ".join(parts)


def time_derivative_bound():
    vals = []
    for n, N in ((8, 25), (16, 50), (32, 100)):
        s = run_simulation(generate_rect_mesh(n, n), five_spot(N=N))
        vals.append(dtc_quartic_integral(s).value)
    ratio = max(vals) / min(vals)
    return ratio < 4, "integrals " + ", ".join(f"{v:.4f}" for v in vals) + f"; ratio {ratio:.3f}"


def dual_seminorm_oracle():
    rng = np.random.default_rng(8)
    worst = math.inf
    for n in (2, 3):
        m = generate_perturbed_mesh(n, n, seed=n)
        for _ in range(5):
            v = DiscreteField(m, rng.standard_normal(m.n_cells), rng.standard_normal(m.n_edges))
            est = dual_seminorm(v)
            best = float(random_feasible_values(v, 10_000, rng).max())
            if abs(est.constraint - 1) > 1e-10:
                return False, f"constraint violated: {est.constraint!r}"
            worst = min(worst, est.value - best)
    return worst >= -1e-6, f"min(estimate - best random) = {worst:.3e}"


def uniform_convergence():
    sc = coupled_mms()
    meshes = [generate_rect_mesh(8 * 2 ** l, 8 * 2 ** l) for l in range(4)]
    grids = [TimeGrid.uniform(sc.T, 8 * 2 ** l) for l in range(4)]
    tab = convergence_study(sc, meshes, grids, workers=int(os.environ.get("HMM_THREADS", "4")))
    ec, eu = tab.column("err_c_uniform"), tab.column("err_u")
    ok = (np.diff(ec) < 0).all() and (np.diff(eu) < 0).all() and ec[-1] / ec[0] < 0.25
    orders = ", ".join(f"{o:.2f}" for o in tab.column("order_c_uniform")[1:])
    return bool(ok), (f"uniform error {ec[0]:.3e} -> {ec[-1]:.3e} (ratio {ec[-1] / ec[0]:.3f}, "
                      f"orders {orders}); velocity {eu[0]:.3e} -> {eu[-1]:.3e}")


def pressure_mms_orders():
    def p(pts, t=0.0):
        return np.cos(PI * pts[:, 0]) * np.cos(PI * pts[:, 1])

    def U(pts, t=0.0):
        x, y = pts[:, 0], pts[:, 1]
        return PI * np.stack([np.sin(PI * x) * np.cos(PI * y), np.cos(PI * x) * np.sin(PI * y)], 1)

    ep, eu = [], []
    for n in (8, 16, 32, 64):
        m = generate_rect_mesh(n, n)
        sol = solve_pressure(m, np.eye(2), None, 0.0, 0.0, 0.0,
                             forcing=lambda x, t: 2 * PI ** 2 * p(x))
        ep.append(math.sqrt(np.dot(m.cell_area, (sol.p.cell - p(m.cell_center)) ** 2)))
        eu.append(cell_vector_error(m, sol.u, U))
    op = [math.log2(a / b) for a, b in zip(ep, ep[1:])]
    ou = [math.log2(a / b) for a, b in zip(eu, eu[1:])]
    ok = all(abs(o - 2) <= 0.3 for o in op) and all(abs(o - 1) <= 0.3 for o in ou)
    return ok, ("pressure orders " + ", ".join(f"{o:.3f}" for o in op)
                + "; velocity orders " + ", ".join(f"{o:.3f}" for o in ou))


def determinism():
    with tempfile.TemporaryDirectory() as tmp:
        outs = []
        for k in range(2):
            cfg = os.path.join(tmp, f"run{k}.cfg")
            with open(cfg, "w") as fh:
                fh.write(f"mesh.kind = perturbed\nmesh.nx = 12\nmesh.seed = 7\n"
                         f"scenario.preset = five_spot\ntime.N = 20\noutput.dir = out{k}\n"
                         f"diagnostics.dtc = true\n")
            code = cli_main(["run", cfg])
            if code != 0:
                return False, f"run {k} exited with {code}"
            outs.append(os.path.join(tmp, f"out{k}"))
        names = sorted(f for f in os.listdir(outs[0]) if f.endswith(".csv"))
        same = []
        for f in names:
            with open(os.path.join(outs[0], f), "rb") as a, open(os.path.join(outs[1], f), "rb") as b:
                same.append(a.read() == b.read())
        return all(same) and len(names) == 4, f"{len(names)} CSVs compared, identical: {all(same)}"


CRITERIA = [
    (1, "geometric identities", geometric_identities, 1.0),
    (2, "gradient affine exactness", gradient_affine_exactness, 1.0),
    (3, "flux conservativity and balance", flux_conservativity, 30.0),
    (4, "upwind identities", upwind_identities, 1.0),
    (5, "discrete mass ledger", mass_ledger_closes, 30.0),
    (6, "discrete energy inequality", energy_inequality, 120.0),
    (7, "time-derivative integral bounded", time_derivative_bound, 300.0),
    (8, "dual seminorm vs random search", dual_seminorm_oracle, 30.0),
    (9, "uniform-in-time convergence", uniform_convergence, 600.0),
    (10, "pressure manufactured solution orders", pressure_mms_orders, 120.0),
    (11, "determinism of cmd_run", determinism, 60.0),
]


def evaluate(func, budget):
    t0 = time.perf_counter()
    ok, detail = func()
    dt = time.perf_counter() - t0
    within = dt <= budget
    return bool(ok) and within, detail, dt, within


def _line(num, name, passed, detail, dt, budget):
    return f"{'PASS' if passed else 'FAIL'} [{num:2d}] {name}: {detail} ({dt:.2f}s / {budget:.0f}s)"


@pytest.mark.parametrize("num, name, func, budget", CRITERIA, ids=[c[1] for c in CRITERIA])
def test_criterion(num, name, func, budget, capsys):
    passed, detail, dt, within = evaluate(func, budget)
    with capsys.disabled():
        print("\n" + _line(num, name, passed, detail, dt, budget))
    assert within, f"criterion {num} over its time budget: {dt:.1f}s > {budget:.0f}s"
    assert passed, detail


if __name__ == "__main__":
    failed = 0
    for num, name, func, budget in CRITERIA:
        passed, detail, dt, _ = evaluate(func, budget)
        failed += not passed
        print(_line(num, name, passed, detail, dt, budget), flush=True)
    print(f"{len(CRITERIA) - failed}/{len(CRITERIA)} criteria passed")
    sys.exit(1 if failed else 0)
