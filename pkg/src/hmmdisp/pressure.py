"""Hybrid mimetic discretisation of the pressure equation.

Solves ``div U = q_inj - q_prod``, ``U = -A(x, c) grad p``, ``U . n = 0`` on the
boundary and ``int p = 0``.  Each cell carries a local flux matrix ``W_K``
built from the stabilised pyramid gradient; fluxes are

    F_K = W_K (p_sigma - p_K)    (F_{K,sigma} approximates -int_sigma U . n_{K,sigma})

Cell unknowns are eliminated cell by cell and the remaining edge system is
symmetric positive semidefinite with the constants as kernel.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .discrete import DiscreteField, FluxField, check_spd, gradient_blocks
from .errors import CoefficientError, CompatibilityError
from .linalg import SolverConfig, solve_singular_neumann

COMPAT_RTOL = 1e-10


@dataclass(frozen=True)
class LocalPressureMatrices:
    """``W_K`` for every cell, grouped by number of edges like
    :meth:`Mesh.valence_groups`: a list of ``(m, cells, inc, W)``."""

    mesh: object
    groups: list

    def for_cell(self, k):
        for m, cells, inc, W in self.groups:
            pos = np.searchsorted(cells, k)
            if pos < len(cells) and cells[pos] == k:
                return W[pos]
        raise IndexError(k)


def local_flux_matrices(mesh, tensors):
    """``W_K = sum_sigma |D_{K,sigma}| B_sigma^T T_{K,sigma} B_sigma`` per cell.

    ``tensors`` is ``(n_pyramids, d, d)``. The result equals
    ``(1/|K|) G^T T G`` plus a stabilisation when ``T`` is constant on ``K``.
    """
    meas = mesh.pyramid_measure
    groups = []
    for m, cells, inc, B in gradient_blocks(mesh):
        T = tensors[inc]
        W = np.einsum("ks,ksai,ksab,ksbj->kij", meas[inc], B, T, B)
        W = 0.5 * (W + np.transpose(W, (0, 2, 1)))
        groups.append((m, cells, inc, W))
    return LocalPressureMatrices(mesh, groups)


def sample_permeability(mesh, A, c_prev):
    """``A(x_K, c_K)`` per cell, repeated on the cell's pyramids."""
    c = np.zeros(mesh.n_cells) if c_prev is None else np.asarray(
        c_prev.cell if isinstance(c_prev, DiscreteField) else c_prev, dtype=float)
    if callable(A):
        Ak = np.asarray(A(mesh.cell_center, c), dtype=float)
    else:
        Ak = np.asarray(A, dtype=float)
    Ak = np.broadcast_to(Ak, (mesh.n_cells, mesh.dim, mesh.dim))
    check_spd(Ak, "permeability of cell")
    return Ak


def assemble_local_matrices(mesh, A, c_prev=None):
    """Local flux matrices with ``A`` sampled at ``(x_K, c_K)`` of ``c_prev``."""
    Ak = sample_permeability(mesh, A, c_prev)
    return local_flux_matrices(mesh, Ak[mesh.inc_cell])


@dataclass(eq=False)
class PressureSolution:
    p: DiscreteField
    F: FluxField
    u: np.ndarray               # (n_cells, d)
    q_inj: np.ndarray           # cell samples actually used
    q_prod: np.ndarray
    forcing: np.ndarray
    raw_defect: float           # max |F_K + F_L| before symmetrisation
    solve_info: object = None
    log: dict = field(default_factory=dict)

    @property
    def source(self):
        return self.q_inj - self.q_prod + self.forcing

    def balance_residual(self):
        """``sum_sigma F_{K,sigma} + |K| (q_inj - q_prod + g)_K`` per cell."""
        mesh = self.p.mesh
        return self.F.cell_sums() + mesh.cell_area * self.source


def _sample(mesh, f, t):
    if f is None:
        return np.zeros(mesh.n_cells)
    v = f(mesh.cell_center, t) if callable(f) else f
    return np.broadcast_to(np.asarray(v, dtype=float), (mesh.n_cells,)).copy()


def balance_sources(mesh, q_inj, q_prod, forcing, *, match_production=False, rtol=COMPAT_RTOL):
    """Make the discrete source integrate to zero.

    Production is rescaled proportionally to absorb the defect, either
    always (``match_production``, production defined as a shape) or when
    the defect is below ``rtol`` times the total well rate.  A manufactured
    forcing has its discrete mean removed.

    Raises
    ------
    CompatibilityError
    """
    area = mesh.cell_area
    if forcing.any():
        forcing = forcing - np.dot(area, forcing) / area.sum()
    inj = float(np.dot(area, q_inj))
    prod = float(np.dot(area, q_prod))
    defect = inj - prod
    scale = inj + prod
    if match_production or abs(defect) <= rtol * scale:
        if prod > 0:
            q_prod = q_prod * (inj / prod)
        elif inj > 0:
            raise CompatibilityError(defect)
    else:
        raise CompatibilityError(defect)
    return q_inj, q_prod, forcing


def solve_pressure(mesh, A, c_prev, q_inj, q_prod, t, *, forcing=None,
                   match_production=False, cfg=SolverConfig("cg")):
    """Pressure, conservative fluxes and cell velocities at time ``t``.

    ``q_inj``, ``q_prod`` and ``forcing`` are callables ``(points, t)`` (or
    arrays of cell values); they are sampled at the cell centres.
    """
    qi = _sample(mesh, q_inj, t)
    qp = _sample(mesh, q_prod, t)
    g = _sample(mesh, forcing, t)
    if (qi < 0).any() or (qp < 0).any():
        raise CoefficientError("well densities must be nonnegative")
    qi, qp, g = balance_sources(mesh, qi, qp, g, match_production=match_production)
    f = qi - qp + g

    local = assemble_local_matrices(mesh, A, c_prev)
    ne, nc = mesh.n_edges, mesh.n_cells
    rows, cols, vals = [], [], []
    rhs = np.zeros(ne)
    cond = []
    for m, cells, inc, W in local.groups:
        a = W.sum(axis=(1, 2))
        bvec = W.sum(axis=2)
        S = W - bvec[:, :, None] * bvec[:, None, :] / a[:, None, None]
        e = mesh.inc_edge[inc]
        rows.append(np.repeat(e, m, axis=1).ravel())
        cols.append(np.tile(e, (1, m)).ravel())
        vals.append(S.ravel())
        src = mesh.cell_area[cells] * f[cells]
        np.add.at(rhs, e, bvec * (src / a)[:, None])
        cond.append((cells, inc, e, a, bvec, src, W))
    S = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(ne, ne))
    S.sum_duplicates()
    S.sort_indices()

    pe, info = solve_singular_neumann(S, rhs, np.ones(ne), cfg)

    pc = np.zeros(nc)
    flux = np.zeros(mesh.n_incidences)
    for cells, inc, e, a, bvec, src, W in cond:
        pc[cells] = (src + np.einsum("km,km->k", bvec, pe[e])) / a
    shift = np.dot(mesh.cell_area, pc) / mesh.cell_area.sum()
    pc -= shift
    pe = pe - shift
    for cells, inc, e, a, bvec, src, W in cond:
        y = pe[e] - pc[cells][:, None]
        flux[inc] = np.einsum("kij,kj->ki", W, y)

    F, raw = _make_conservative(mesh, flux)
    p = DiscreteField(mesh, pc, pe)
    u = reconstruct_velocity(mesh, F)
    return PressureSolution(p, F, u, qi, qp, g, raw, info,
                            {"iterations": info.iterations, "residual": info.residual})


def _make_conservative(mesh, flux):
    # F_{K,s} := (F_{K,s} - F_{L,s}) / 2 on interior edges, 0 on the boundary
    total = np.bincount(mesh.inc_edge, weights=flux, minlength=mesh.n_edges)
    interior = mesh.inc_neighbour >= 0
    raw = float(np.abs(total[mesh.interior_edges]).max()) if interior.any() else 0.0
    out = np.where(interior, flux - 0.5 * total[mesh.inc_edge], 0.0)
    # exact antisymmetry: copy the first side's value, negated, to the second side
    order = np.arange(mesh.n_incidences)
    first = np.full(mesh.n_edges, mesh.n_incidences, dtype=np.int64)
    np.minimum.at(first, mesh.inc_edge, order)
    second = interior & (first[mesh.inc_edge] != order)
    out[second] = -out[first[mesh.inc_edge[second]]]
    return FluxField(mesh, out), raw


def reconstruct_velocity(mesh, F):
    """``u_K = -(1/|K|) sum_sigma F_{K,sigma} (xbar_sigma - x_K)``."""
    vals = F.values if isinstance(F, FluxField) else np.asarray(F, dtype=float)
    dx = mesh.edge_midpoint[mesh.inc_edge] - mesh.cell_center[mesh.inc_cell]
    s = np.add.reduceat(vals[:, None] * dx, mesh.cell_ptr[:-1], axis=0)
    return -s / mesh.cell_area[:, None]


def flux_h_seminorm(mesh, F):
    """``sum over interior sigma = K|L of d_{K,sigma} / |sigma| F_{K,sigma}^2``,
    with ``K`` the lower-numbered cell of the edge."""
    vals = F.values if isinstance(F, FluxField) else np.asarray(F, dtype=float)
    pick = (mesh.inc_neighbour >= 0) & (mesh.inc_cell < mesh.inc_neighbour)
    e = mesh.inc_edge[pick]
    return float(np.sum(mesh.inc_dist[pick] / mesh.edge_length[e] * vals[pick] ** 2))
