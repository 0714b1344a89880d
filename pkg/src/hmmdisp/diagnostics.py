"""Discrete estimates and error measures computed from a finished run.

* :func:`mass_ledger` tests the scheme with the constant test field.
* :func:`energy_report` tests it with the solution itself; the left side
  (kinetic + diffusion + well terms) never exceeds the right side
  (initial + injection work) because upwinding and implicit Euler only
  dissipate.
* :func:`dual_seminorm` and :func:`dtc_quartic_integral` measure the
  discrete time derivative weakly, against test fields with unit
  ``L^{2d}`` gradient norm.
* :func:`uniform_error` and friends compare with a manufactured solution.
"""

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .discrete import (
    _cached, _subtriangle_points, diffusion_form, gradient_operator, stiffness_matrix,
    time_quotient,
)
from .errors import HMMError

logger = logging.getLogger(__name__)

ENERGY_RTOL = 1e-8
LEDGER_RTOL = 1e-8


class DiagnosticError(HMMError):
    """A discrete identity or inequality that must hold does not."""

    def __init__(self, message, level=None):
        self.level = level
        super().__init__(message)


# --- mass ledger -----------------------------------------------------------

@dataclass
class MassLedger:
    """Per step: storage change, injected mass, produced mass, manufactured
    source, and ``residual = storage - injected + produced - source``."""

    levels: np.ndarray
    storage: np.ndarray
    injected: np.ndarray
    produced: np.ndarray
    source: np.ndarray
    residual: np.ndarray
    scale: np.ndarray

    @property
    def relative(self):
        return np.abs(self.residual) / np.where(self.scale > 0, self.scale, 1.0)

    @property
    def global_residual(self):
        return float(self.storage.sum() - self.injected.sum() + self.produced.sum()
                     - self.source.sum())

    def check(self, rtol=LEDGER_RTOL):
        bad = np.flatnonzero(self.relative > rtol)
        if len(bad):
            n = int(self.levels[bad[0]])
            raise DiagnosticError(f"mass ledger fails at level {n}: relative residual "
                                  f"{self.relative[bad[0]]:.3e} > {rtol:.1e}", level=n)
        return self

    def rows(self):
        for i, n in enumerate(self.levels):
            yield {
                "level": int(n), "storage": self.storage[i], "injected": self.injected[i],
                "produced": self.produced[i], "source": self.source[i],
                "residual": self.residual[i], "cumulative_residual":
                    float(np.sum(self.residual[:i + 1])),
            }


def mass_ledger(state):
    """Test the scheme with ``phi = 1`` at every step."""
    mesh = state.mesh
    area = mesh.cell_area
    out = {k: [] for k in ("storage", "injected", "produced", "source", "scale")}
    for n in range(1, state.grid.N + 1):
        sysn, ps = state.systems[n], state.pressure[n]
        c, c0 = state.c.levels[n].cell, state.c.levels[n - 1].cell
        dt = sysn.dt
        w = area * sysn.porosity
        out["storage"].append(float(np.dot(w, c - c0)))
        out["injected"].append(dt * float(np.dot(area, ps.q_inj * sysn.injected_conc)))
        out["produced"].append(dt * float(np.dot(area, ps.q_prod * c)))
        out["source"].append(dt * float(np.dot(area, sysn.forcing)))
        out["scale"].append(float(np.dot(w, np.abs(c) + np.abs(c0)))
                            + dt * float(np.dot(area, np.abs(ps.q_inj * sysn.injected_conc)
                                                + np.abs(ps.q_prod * c) + np.abs(sysn.forcing))))
    arr = {k: np.array(v) for k, v in out.items()}
    residual = arr["storage"] - arr["injected"] + arr["produced"] - arr["source"]
    return MassLedger(np.arange(1, state.grid.N + 1), arr["storage"], arr["injected"],
                      arr["produced"], arr["source"], residual, arr["scale"])


# --- energy ----------------------------------------------------------------

@dataclass
class EnergyReport:
    """Cumulative energy terms per level ``k = 0..N``.

    ``residual = kinetic + diffusion + wells - initial - injection - manufactured``
    is nonpositive up to rounding and solver tolerance.  ``manufactured``
    collects the work of the verification-only forcings and is zero for
    physical scenarios.
    """

    times: np.ndarray
    kinetic: np.ndarray
    initial: float
    injection: np.ndarray
    wells: np.ndarray
    diffusion: np.ndarray
    manufactured: np.ndarray

    @property
    def residual(self):
        return (self.kinetic + self.diffusion + self.wells - self.initial - self.injection
                - self.manufactured)

    @property
    def scale(self):
        return (np.abs(self.kinetic) + abs(self.initial) + np.abs(self.injection)
                + np.abs(self.wells) + np.abs(self.diffusion) + np.abs(self.manufactured))

    def check(self, rtol=ENERGY_RTOL):
        bad = np.flatnonzero(self.residual > rtol * self.scale)
        if len(bad):
            k = int(bad[0])
            raise DiagnosticError(
                f"discrete energy inequality violated at level {k}: residual "
                f"{self.residual[k]:.3e} > {rtol:.1e} * {self.scale[k]:.3e}", level=k)
        return self

    def rows(self):
        for k in range(len(self.times)):
            yield {
                "level": k, "time": self.times[k], "kinetic": self.kinetic[k],
                "initial": self.initial, "injection": self.injection[k],
                "well_dissipation": self.wells[k], "diffusion_dissipation": self.diffusion[k],
                "manufactured_work": self.manufactured[k], "residual": self.residual[k],
            }


def energy_report(state, scenario=None, check=True):
    """Energy balance obtained by testing each step with ``phi = c^(n)``.

    ``scenario`` defaults to the one of the run; coefficient samples are
    taken from the stored step systems so the terms match the solve exactly.
    """
    del scenario  # the run already holds every sampled coefficient
    mesh = state.mesh
    area = mesh.cell_area
    N = state.grid.N
    kinetic = np.zeros(N + 1)
    inj = np.zeros(N + 1)
    wells = np.zeros(N + 1)
    diff = np.zeros(N + 1)
    manu = np.zeros(N + 1)
    phi0 = state.systems[1].porosity if N >= 1 else np.ones(mesh.n_cells)
    kinetic[0] = 0.5 * float(np.dot(area * phi0, state.c.levels[0].cell ** 2))
    for n in range(1, N + 1):
        sysn, ps = state.systems[n], state.pressure[n]
        cn = state.c.levels[n]
        c = cn.cell
        dt = sysn.dt
        kinetic[n] = 0.5 * float(np.dot(area * sysn.porosity, c ** 2))
        inj[n] = inj[n - 1] + dt * float(np.dot(area, c * sysn.injected_conc * ps.q_inj))
        wells[n] = wells[n - 1] + 0.5 * dt * float(np.dot(area, c ** 2 * (ps.q_inj + ps.q_prod)))
        diff[n] = diff[n - 1] + dt * diffusion_form(sysn.dispersion, cn, cn)
        manu[n] = manu[n - 1] + dt * float(
            np.dot(area, sysn.forcing * c) - 0.5 * np.dot(area, ps.forcing * c ** 2))
    rep = EnergyReport(np.asarray(state.grid.nodes), kinetic, kinetic[0], inj, wells, diff, manu)
    if check:
        rep.check()
    return rep


# --- dual seminorm ---------------------------------------------------------

@dataclass
class DualSeminormEstimate:
    """Certified lower bound ``value = int Pi v Pi w`` for a test field ``w``
    with zero mean and ``||grad_D w||_{L^{2d}} = constraint`` (= 1)."""

    value: float
    mean_pairing: float
    iterations: int
    converged: bool
    w: object
    constraint: float
    trace: list = field(default_factory=list)


class _DualProblem:
    def __init__(self, mesh):
        self.mesh = mesh
        self.op = gradient_operator(mesh)
        self.meas = mesh.pyramid_measure
        self.p = 2 * mesh.dim
        S = stiffness_matrix(mesh, np.eye(mesh.dim)).tocsc()
        # one dof pinned: the direction is only needed up to a constant
        self.lu = spla.splu(S[1:, 1:].tocsc())
        self.area = mesh.cell_area
        self.total = float(mesh.cell_area.sum())

    def precondition(self, r):
        z = np.zeros_like(r)
        z[1:] = self.lu.solve(r[1:])
        return z

    def grad_norm(self, w):
        g = (self.op @ w).reshape(-1, self.mesh.dim)
        mag2 = (g ** 2).sum(axis=1)
        return float(np.dot(self.meas, mag2 ** (self.p / 2)) ** (1.0 / self.p)), g, mag2

    def normalise(self, w):
        nc = self.mesh.n_cells
        w = w - np.dot(self.area, w[:nc]) / self.total
        N, _, _ = self.grad_norm(w)
        return w / N


def _dual_problem(mesh):
    return _cached(mesh, "dual_problem", lambda: _DualProblem(mesh))


def random_feasible_values(v, n_samples, rng):
    """``int Pi v Pi w`` for ``n_samples`` random zero-mean ``w`` with unit
    ``L^{2d}`` gradient norm (a brute-force lower bound for the seminorm)."""
    mesh = v.mesh
    prob = _dual_problem(mesh)
    nc = mesh.n_cells
    out = []
    for start in range(0, n_samples, 2000):
        k = min(2000, n_samples - start)
        W = rng.standard_normal((mesh.n_dofs, k))
        W -= (prob.area @ W[:nc]) / prob.total
        G = (prob.op @ W).reshape(-1, mesh.dim, k)
        mag2 = (G ** 2).sum(axis=1)
        N = (prob.meas @ mag2 ** (prob.p / 2)) ** (1.0 / prob.p)
        out.append((prob.area * v.cell) @ W[:nc] / N)
    return np.concatenate(out)


def dual_seminorm(v, tol=1e-8, max_iter=500):
    """Lower bound of the dual seminorm of ``v`` over zero-mean test fields.

    Maximises ``int Pi v Pi w`` on ``||grad_D w||_{L^{2d}} = 1`` by gradient
    ascent on the constraint surface, preconditioned by the discrete
    Laplacian and started from the ``L^2``-constrained maximiser. Every
    iterate is feasible, so the returned value is always a valid lower
    bound; ``converged`` tells whether the relative improvement fell below
    ``tol`` within ``max_iter`` iterations.
    """
    mesh = v.mesh
    prob = _dual_problem(mesh)
    nc = mesh.n_cells
    mean_pairing = float(np.dot(prob.area, v.cell))
    b = np.zeros(mesh.n_dofs)
    b[:nc] = prob.area * (v.cell - mean_pairing / prob.total)
    s = float(np.abs(b).max())
    if s == 0.0:
        w = np.zeros(mesh.n_dofs)
        return DualSeminormEstimate(0.0, mean_pairing, 0, True,
                                    type(v).from_vector(mesh, w), 0.0)
    b /= s

    w = prob.normalise(prob.precondition(b))
    val = float(b @ w)
    if val < 0:
        w, val = -w, -val
    trace = [val]
    step = 1.0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        _, g, mag2 = prob.grad_norm(w)
        dN = prob.op.T @ ((prob.meas * mag2 ** (prob.p / 2 - 1))[:, None] * g).ravel()
        direction = prob.precondition(b - val * dN)
        improved = False
        for _ in range(40):
            cand = prob.normalise(w + step * direction)
            cval = float(b @ cand)
            if cval > val:
                improved = True
                break
            step *= 0.5
        if not improved:
            converged = True
            break
        gain = cval - val
        w, val = cand, cval
        trace.append(val)
        step *= 2.0
        if gain <= tol * abs(val):
            converged = True
            break
    constraint, _, _ = prob.grad_norm(w)
    from .discrete import DiscreteField
    return DualSeminormEstimate(val * s, mean_pairing, it, converged,
                                DiscreteField.from_vector(mesh, w), constraint,
                                [t * s for t in trace])


@dataclass
class TimeDerivativeEstimate:
    """``value = sum_n dt_n |delta c^(n)|_*^4`` plus the per-step pieces."""

    value: float
    steps: np.ndarray
    seminorms: np.ndarray
    mean_pairings: np.ndarray
    converged: np.ndarray

    def __float__(self):
        return self.value

    def rows(self):
        for n in range(len(self.steps)):
            yield {"level": n + 1, "dt": self.steps[n], "seminorm": self.seminorms[n],
                   "mean_pairing": self.mean_pairings[n], "converged": int(self.converged[n])}


def dtc_quartic_integral(state, tol=1e-8, max_iter=500):
    """Integral over (0, T) of the fourth power of the dual seminorm of the
    discrete time derivative (exact in time: the quotient is piecewise constant)."""
    c = state.c if hasattr(state, "c") else state
    N = c.grid.N
    steps = c.grid.steps
    semis = np.zeros(N)
    means = np.zeros(N)
    conv = np.zeros(N, dtype=bool)
    for n in range(1, N + 1):
        est = dual_seminorm(time_quotient(c, n), tol=tol, max_iter=max_iter)
        semis[n - 1] = est.value
        means[n - 1] = est.mean_pairing
        conv[n - 1] = est.converged
    return TimeDerivativeEstimate(float(np.sum(steps * semis ** 4)), steps, semis, means, conv)


# --- errors against manufactured solutions ---------------------------------

def _cell_l2(mesh, values):
    return float(np.sqrt(np.dot(mesh.cell_area, values ** 2)))


def uniform_error(state, exact_c):
    """``max_n ||Pi c^(n) - c(., t_n)||_{L^2}`` with the exact solution sampled
    at the cell centres."""
    mesh = state.mesh
    errs = [_cell_l2(mesh, lv.cell - exact_c(mesh.cell_center, t))
            for lv, t in zip(state.c.levels, state.grid.nodes)]
    return float(max(errs))


def l2_time_error(state, exact_c):
    """``||Pi c - c||_{L^2(Omega x (0, T))}`` with cell-centre samples."""
    mesh = state.mesh
    total = 0.0
    for n in range(1, state.grid.N + 1):
        e = state.c.levels[n].cell - exact_c(mesh.cell_center, state.grid.nodes[n])
        total += state.grid.step(n) * _cell_l2(mesh, e) ** 2
    return math.sqrt(total)


def cell_vector_error(mesh, u, exact, t=0.0):
    """``||u - exact(., t)||_{L^2}`` for cellwise-constant ``u``, integrated by
    the degree-2 rule on the pyramid triangles (sampling only at the centres
    would hide the first-order error of a piecewise constant)."""
    uk = np.asarray(u, dtype=float)[mesh.inc_cell]
    e2 = sum(((uk - exact(p, t)) ** 2).sum(axis=1) for p in _subtriangle_points(mesh)) / 3.0
    return math.sqrt(float(np.dot(mesh.pyramid_measure, e2)))


def velocity_error(state, exact_U):
    """``||u - U||_{L^2(Omega x (0, T))}``, time integral exact for the
    right-endpoint sample."""
    mesh = state.mesh
    total = 0.0
    for n in range(1, state.grid.N + 1):
        e = cell_vector_error(mesh, state.pressure[n].u, exact_U, state.grid.nodes[n])
        total += state.grid.step(n) * e ** 2
    return math.sqrt(total)


def pressure_error(state, exact_p):
    """``||Pi p - p||_{L^2(Omega x (0, T))}`` with cell-centre samples."""
    mesh = state.mesh
    total = 0.0
    for n in range(1, state.grid.N + 1):
        t = state.grid.nodes[n]
        e = state.pressure[n].p.cell - exact_p(mesh.cell_center, t)
        total += state.grid.step(n) * _cell_l2(mesh, e) ** 2
    return math.sqrt(total)


def gradient_error(state, exact_grad):
    """``||grad_D c - grad c||_{L^2(Omega x (0, T))}``, exact gradient at the
    pyramid barycentres."""
    mesh = state.mesh
    op = gradient_operator(mesh)
    bary = mesh.pyramid_barycenter
    meas = mesh.pyramid_measure
    total = 0.0
    for n in range(1, state.grid.N + 1):
        g = (op @ state.c.levels[n].to_vector()).reshape(-1, mesh.dim)
        e2 = ((g - exact_grad(bary, state.grid.nodes[n])) ** 2).sum(axis=1)
        total += state.grid.step(n) * float(np.dot(meas, e2))
    return math.sqrt(total)


def _psi_fields():
    return [
        lambda p, t: np.stack([p[:, 0], np.zeros(len(p))], axis=1),
        lambda p, t: np.stack([np.zeros(len(p)), np.sin(np.pi * p[:, 1])], axis=1),
        lambda p, t: np.stack([np.cos(np.pi * p[:, 0]) * p[:, 1], p[:, 0] * p[:, 1] * (1 + t)],
                              axis=1),
    ]


TEST_FIELDS = _psi_fields()


def gradient_pairings(state, fields=TEST_FIELDS):
    """``int_0^T int grad_D c . Psi`` for each smooth test field ``Psi``
    (one-point rule per pyramid and per time slab)."""
    mesh = state.mesh
    op = gradient_operator(mesh)
    bary = mesh.pyramid_barycenter
    meas = mesh.pyramid_measure
    out = np.zeros(len(fields))
    for n in range(1, state.grid.N + 1):
        t = state.grid.nodes[n]
        g = (op @ state.c.levels[n].to_vector()).reshape(-1, mesh.dim)
        for j, psi in enumerate(fields):
            out[j] += state.grid.step(n) * float(np.dot(meas, (g * psi(bary, t)).sum(axis=1)))
    return out


def exact_gradient_pairings(exact_grad, T, domain=(0.0, 1.0, 0.0, 1.0), fields=TEST_FIELDS,
                            order=24):
    """Reference values of :func:`gradient_pairings` by tensor Gauss-Legendre."""
    x0, x1, y0, y1 = domain
    g, wg = np.polynomial.legendre.leggauss(order)
    xs = 0.5 * (x1 - x0) * (g + 1) + x0
    ys = 0.5 * (y1 - y0) * (g + 1) + y0
    ts = 0.5 * T * (g + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    WX, WY = np.meshgrid(wg, wg, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    wxy = (WX * WY).ravel() * 0.25 * (x1 - x0) * (y1 - y0)
    out = np.zeros(len(fields))
    for tt, wt in zip(ts, wg * 0.5 * T):
        gc = exact_grad(pts, tt)
        for j, psi in enumerate(fields):
            out[j] += wt * float(np.dot(wxy, (gc * psi(pts, tt)).sum(axis=1)))
    return out


# --- convergence tables ----------------------------------------------------

METRICS = ("err_c_uniform", "err_c_l2", "err_grad", "err_u", "err_p", "err_pairing")


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)
    metrics: tuple = METRICS

    def add(self, row):
        self.rows.append(dict(row))
        self.rows.sort(key=lambda r: -r["h"])
        self._orders()

    def _orders(self):
        for i, row in enumerate(self.rows):
            for m in self.metrics:
                key = "order_" + m[4:]
                if i == 0 or m not in row:
                    row[key] = float("nan")
                    continue
                prev = self.rows[i - 1]
                e0, e1 = prev.get(m), row[m]
                if e0 and e1 and e0 > 0 and e1 > 0:
                    row[key] = math.log(e0 / e1) / math.log(prev["h"] / row["h"])
                else:
                    row[key] = float("nan")

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    @property
    def columns(self):
        cols = ["level", "h", "dt", "cells", "steps"]
        cols += [m for m in self.metrics]
        cols += ["order_" + m[4:] for m in self.metrics]
        return cols

    def to_csv(self, path=None):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.columns)
        for r in self.rows:
            wr.writerow([_fmt(r.get(c, float("nan"))) for c in self.columns])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12e}"


class ConvergenceStudyError(HMMError):
    def __init__(self, message, table, level):
        self.table = table
        self.level = level
        super().__init__(message)


def evaluate_level(state, exact, level=0):
    """Error metrics of one run against a manufactured solution."""
    mesh = state.mesh
    dom = (mesh.origin or {}).get("domain", (0.0, 1.0, 0.0, 1.0))
    pair = gradient_pairings(state)
    ref = exact_gradient_pairings(exact.grad_c, state.grid.T, dom)
    return {
        "level": level,
        "h": mesh.h,
        "dt": state.grid.max_step,
        "cells": mesh.n_cells,
        "steps": state.grid.N,
        "err_c_uniform": uniform_error(state, exact.c),
        "err_c_l2": l2_time_error(state, exact.c),
        "err_grad": gradient_error(state, exact.grad_c),
        "err_u": velocity_error(state, exact.U),
        "err_p": pressure_error(state, exact.p),
        "err_pairing": float(np.abs(pair - ref).max()),
    }


def convergence_study(scenario, meshes, grids, *, run=None, workers=1, **run_kwargs):
    """Run ``scenario`` on each (mesh, time grid) pair and tabulate errors.

    ``scenario.exact`` must hold the manufactured solution.  Levels may run
    concurrently (``workers``); rows are always assembled in level order.
    """
    from .transport import run_simulation

    if scenario.exact is None:
        raise ValueError("convergence studies need a manufactured scenario")
    if len(meshes) != len(grids):
        raise ValueError("need one time grid per mesh")
    run = run or run_simulation

    def one(i):
        state = run(meshes[i], scenario.with_grid(grids[i]), **run_kwargs)
        return evaluate_level(state, scenario.exact, i)

    table = ConvergenceTable()
    results = [None] * len(meshes)
    failure = None
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(one, i) for i in range(len(meshes))]
            for i, fut in enumerate(futures):
                try:
                    results[i] = fut.result()
                except HMMError as exc:
                    failure = failure or (i, exc)
    else:
        for i in range(len(meshes)):
            try:
                results[i] = one(i)
            except HMMError as exc:
                failure = (i, exc)
                break
    for r in results:
        if r is not None:
            table.add(r)
    if failure is not None:
        i, exc = failure
        raise ConvergenceStudyError(f"refinement level {i} failed: {exc}", table, i) from exc
    return table
