"""Implicit-Euler hybrid finite volume scheme for the concentration, with
upwinded convection, and the sequential pressure/concentration time loop.

Each step first solves the pressure with the permeability frozen at the
previous concentration, then solves the (linear, nonsymmetric) hybrid
system for the new concentration:

    sum_K |K| Phi_K (c_K - c_K^old) / dt phi_K + a_D(c, phi) + upwind(F; c, phi)
        + sum_K |K| q_prod_K c_K phi_K = sum_K |K| (q_inj chat + g)_K phi_K

for every test field ``phi``.  Sources are sampled at ``(x_K, t_n)``.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .discrete import (
    DiscreteField, FluxField, SpaceTimeField, TimeGrid, check_spd, interpolate,
    sample_cells, stiffness_matrix,
)
from .errors import CoefficientError, HMMError
from .linalg import SolverConfig, solve
from .pressure import solve_pressure

logger = logging.getLogger(__name__)


def _isotropic(values, d=2):
    return np.asarray(values, dtype=float)[:, None, None] * np.eye(d)[None]


@dataclass
class Scenario:
    """Coefficients and time grid of one displacement problem.

    All coefficient callables are vectorised over an ``(n, 2)`` array of
    points: ``porosity(x)``, ``permeability(x, c) -> (n, 2, 2)``,
    ``dispersion(x, zeta) -> (n, 2, 2)``, ``injected_conc(x, t)``,
    ``initial(x)``, ``q_inj(x, t)``, ``q_prod(x, t)``.  The optional
    ``pressure_forcing`` and ``conc_forcing`` ``(x, t)`` terms exist only for
    manufactured-solution checks.

    With ``match_production`` the production density is a shape that is
    rescaled every step so that discrete production equals injection.
    """

    name: str
    porosity: object
    permeability: object
    dispersion: object
    injected_conc: object
    initial: object
    q_inj: object
    q_prod: object
    grid: TimeGrid
    phi_min: float = 1.0
    alpha_D: float = 1.0
    Lambda_D: float = 1.0
    match_production: bool = False
    pressure_forcing: object = None
    conc_forcing: object = None
    initial_quadrature: str = "centroid"
    exact: object = None
    description: str = ""

    @property
    def T(self):
        return self.grid.T

    def with_grid(self, grid):
        out = Scenario(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.grid = grid
        return out

    def validate(self, mesh):
        """Check the coefficient hypotheses at the cell centres and time nodes."""
        if not (self.phi_min > 0 and self.alpha_D > 0 and self.Lambda_D > 0):
            raise CoefficientError("bound constants phi_min, alpha_D, Lambda_D must be positive")
        x = mesh.cell_center
        phi = sample_cells(mesh, self.porosity)
        if (phi < self.phi_min * (1 - 1e-12)).any() or (phi > (1 + 1e-12) / self.phi_min).any():
            raise CoefficientError(f"porosity outside [{self.phi_min}, {1 / self.phi_min}]")
        c0 = np.asarray(self.initial(x), dtype=float)
        if (c0 < 0).any() or (c0 > 1).any():
            raise CoefficientError("initial concentration outside [0, 1]")
        for t in self.grid.nodes:
            ch = np.asarray(self.injected_conc(x, t), dtype=float)
            if (ch < 0).any() or (ch > 1).any():
                raise CoefficientError(f"injected concentration outside [0, 1] at t={t}")
            for name in ("q_inj", "q_prod"):
                q = np.asarray(getattr(self, name)(x, t), dtype=float)
                if (q < 0).any():
                    raise CoefficientError(f"{name} negative at t={t}")


def dispersion_tensors(mesh, scenario, u):
    """``D(xbar_pyramid, u_K)`` for every pyramid, shape ``(n_pyramids, 2, 2)``."""
    zeta = np.asarray(u, dtype=float)[mesh.inc_cell]
    D = np.asarray(scenario.dispersion(mesh.pyramid_barycenter, zeta), dtype=float)
    D = np.broadcast_to(D, (mesh.n_incidences, mesh.dim, mesh.dim))
    check_spd(D, "dispersion tensor on pyramid")
    return D


@dataclass(frozen=True)
class UpwindSplit:
    """``(-F)^+`` and ``(-F)^-`` per incidence; zero on boundary incidences."""

    pos: np.ndarray
    neg: np.ndarray


def upwind_split(F):
    mesh = F.mesh
    g = np.where(mesh.inc_neighbour >= 0, -F.values, 0.0)
    return UpwindSplit(np.maximum(g, 0.0), np.maximum(-g, 0.0))


def upwind_form(F, c, w):
    """``sum_K sum_{sigma=K|L interior} [(-F)^+ c_K - (-F)^- c_L] w_K``."""
    mesh = F.mesh
    split = upwind_split(F)
    inner = mesh.inc_neighbour >= 0
    K = mesh.inc_cell[inner]
    L = mesh.inc_neighbour[inner]
    terms = (split.pos[inner] * c.cell[K] - split.neg[inner] * c.cell[L]) * w.cell[K]
    return float(terms.sum())


def upwind_matrix(F):
    """Sparse ``(n_cells, n_cells)`` matrix of the upwind form in ``c``."""
    mesh = F.mesh
    split = upwind_split(F)
    inner = mesh.inc_neighbour >= 0
    K = mesh.inc_cell[inner]
    L = mesh.inc_neighbour[inner]
    rows = np.concatenate([K, K])
    cols = np.concatenate([K, L])
    vals = np.concatenate([split.pos[inner], -split.neg[inner]])
    nc = mesh.n_cells
    U = sp.csr_matrix((vals, (rows, cols)), shape=(nc, nc))
    U.sum_duplicates()
    return U


@dataclass(eq=False)
class TransportSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dispersion: np.ndarray      # pyramid tensors used
    porosity: np.ndarray        # Phi_K
    injected_conc: np.ndarray   # chat_K at t_n
    forcing: np.ndarray         # g_c at (x_K, t_n)
    dt: float


def assemble_transport_step(mesh, scenario, pressure, c_prev, n):
    """Linear system for ``c^(n)`` given the pressure solution of level ``n``.

    Unknowns are ordered cells first, then edges.
    """
    grid = scenario.grid
    dt = grid.step(n)
    t = grid.nodes[n]
    x = mesh.cell_center
    area = mesh.cell_area
    phi = np.array(sample_cells(mesh, scenario.porosity))
    chat = np.broadcast_to(np.asarray(scenario.injected_conc(x, t), dtype=float),
                           (mesh.n_cells,)).copy()
    gc = (np.zeros(mesh.n_cells) if scenario.conc_forcing is None else
          np.broadcast_to(np.asarray(scenario.conc_forcing(x, t), dtype=float),
                          (mesh.n_cells,)).copy())
    D = dispersion_tensors(mesh, scenario, pressure.u)

    K = stiffness_matrix(mesh, D)
    nc = mesh.n_cells
    diag = area * phi / dt + area * pressure.q_prod
    cell_block = sp.diags(diag) + upwind_matrix(pressure.F)
    extra = sp.bmat([[cell_block, None], [None, sp.csr_matrix((mesh.n_edges, mesh.n_edges))]])
    A = (K + extra).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    rhs = np.zeros(mesh.n_dofs)
    rhs[:nc] = area * phi * c_prev.cell / dt + area * (pressure.q_inj * chat + gc)
    return TransportSystem(A, rhs, np.array(D), phi, chat, gc, dt)


def transport_step(mesh, scenario, pressure, c_prev, n, cfg=SolverConfig("bicgstab")):
    system = assemble_transport_step(mesh, scenario, pressure, c_prev, n)
    x, info = solve(system.matrix, system.rhs, cfg, x0=c_prev.to_vector())
    return DiscreteField.from_vector(mesh, x), system, info


def initial_condition(mesh, scenario):
    """``c^(0) = I_D c_0``."""
    return interpolate(mesh, scenario.initial, scenario.initial_quadrature)


@dataclass(eq=False)
class SimulationState:
    """Result of :func:`run_simulation`.

    ``pressure[n]`` and ``systems[n]`` belong to level ``n``; index 0 holds
    ``None``.  ``log`` has one dict of solver statistics per step and is
    deterministic; wall-clock timings live in ``timings``.
    """

    mesh: object
    scenario: Scenario
    c: SpaceTimeField
    pressure: list
    systems: list
    log: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    @property
    def grid(self):
        return self.c.grid


def run_simulation(mesh, scenario, *, pressure_cfg=SolverConfig("cg"),
                   transport_cfg=SolverConfig("bicgstab"), validate=True):
    """Advance the coupled scheme over the whole time grid.

    Errors raised at a step carry the level index in their message and in
    their ``level`` attribute.
    """
    if validate:
        scenario.validate(mesh)
    grid = scenario.grid
    c = initial_condition(mesh, scenario)
    levels, pressures, systems = [c], [None], [None]
    log, timings = [], []
    for n in range(1, grid.N + 1):
        t0 = time.perf_counter()
        t = grid.nodes[n]
        try:
            ps = solve_pressure(
                mesh, scenario.permeability, c, scenario.q_inj, scenario.q_prod, t,
                forcing=scenario.pressure_forcing, match_production=scenario.match_production,
                cfg=pressure_cfg)
            t1 = time.perf_counter()
            c, system, info = transport_step(mesh, scenario, ps, c, n, transport_cfg)
        except HMMError as exc:
            exc.level = n
            exc.args = (f"level {n}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        t2 = time.perf_counter()
        levels.append(c)
        pressures.append(ps)
        systems.append(system)
        log.append({
            "level": n,
            "time": t,
            "pressure_iterations": ps.solve_info.iterations,
            "pressure_residual": ps.solve_info.residual,
            "flux_defect": ps.raw_defect,
            "transport_iterations": info.iterations,
            "transport_residual": info.residual,
            "c_min": float(c.cell.min()),
            "c_max": float(c.cell.max()),
        })
        timings.append({"level": n, "pressure_s": t1 - t0, "transport_s": t2 - t1})
        logger.debug("level %d: p its %d, c its %d", n, ps.solve_info.iterations, info.iterations)
    return SimulationState(mesh, scenario, SpaceTimeField(grid, levels), pressures, systems,
                           log, timings)
