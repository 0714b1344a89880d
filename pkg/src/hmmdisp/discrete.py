"""Hybrid unknowns, fluxes and the gradient-scheme operators on a mesh.

A :class:`DiscreteField` stores one value per cell and one per edge.  The
discrete gradient is the stabilised HMM gradient: on the pyramid with apex
``x_K`` and base ``sigma``

    grad_{K,sigma} v = grad_K v + sqrt(d) / d_{K,sigma} * R_{K,sigma}(v) n_{K,sigma}

with the consistent cell gradient ``grad_K v = 1/|K| sum |sigma| v_sigma n_{K,sigma}``
and the residual ``R_{K,sigma}(v) = v_sigma - v_K - grad_K v . (xbar_sigma - x_K)``.
It is exact on interpolants of affine functions.

Pyramids are indexed like mesh incidences; hybrid degrees of freedom are
numbered cells first, then edges.
"""

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CoefficientError

_CACHE = weakref.WeakKeyDictionary()


def _cached(mesh, key, build):
    store = _CACHE.setdefault(mesh, {})
    if key not in store:
        store[key] = build()
    return store[key]


@dataclass(eq=False)
class DiscreteField:
    """Element of X_M: ``cell`` values (n_cells,) and ``edge`` values (n_edges,)."""

    mesh: object
    cell: np.ndarray
    edge: np.ndarray

    def __post_init__(self):
        self.cell = np.asarray(self.cell, dtype=float)
        self.edge = np.asarray(self.edge, dtype=float)
        if self.cell.shape != (self.mesh.n_cells,) or self.edge.shape != (self.mesh.n_edges,):
            raise ValueError(
                f"field has {self.cell.shape} cell / {self.edge.shape} edge values, mesh has "
                f"{self.mesh.n_cells} cells / {self.mesh.n_edges} edges"
            )

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.n_cells), np.zeros(mesh.n_edges))

    @classmethod
    def constant(cls, mesh, value):
        return cls(mesh, np.full(mesh.n_cells, float(value)), np.full(mesh.n_edges, float(value)))

    @classmethod
    def from_vector(cls, mesh, x):
        x = np.asarray(x, dtype=float)
        return cls(mesh, x[:mesh.n_cells].copy(), x[mesh.n_cells:].copy())

    def to_vector(self):
        return np.concatenate([self.cell, self.edge])

    def is_finite(self):
        return bool(np.isfinite(self.cell).all() and np.isfinite(self.edge).all())

    def _combine(self, other, op):
        if isinstance(other, DiscreteField):
            if other.mesh is not self.mesh:
                raise ValueError("fields live on different meshes")
            return DiscreteField(self.mesh, op(self.cell, other.cell), op(self.edge, other.edge))
        return DiscreteField(self.mesh, op(self.cell, other), op(self.edge, other))

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, scalar):
        return DiscreteField(self.mesh, self.cell * scalar, self.edge * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return DiscreteField(self.mesh, self.cell / scalar, self.edge / scalar)

    def __neg__(self):
        return DiscreteField(self.mesh, -self.cell, -self.edge)


@dataclass(eq=False)
class FluxField:
    """Element of F_M: one value per (cell, edge) incidence, in mesh incidence order."""

    mesh: object
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_incidences,):
            raise ValueError(
                f"flux field needs {self.mesh.n_incidences} values, got {self.values.shape}"
            )

    def cell_values(self, k):
        return self.values[self.mesh.cell_incidences(k)]

    def conservativity_defect(self):
        """``F_{K,sigma} + F_{L,sigma}`` for every interior edge (ordered by edge id)."""
        total = np.bincount(self.mesh.inc_edge, weights=self.values, minlength=self.mesh.n_edges)
        return total[self.mesh.interior_edges]

    def cell_sums(self):
        return np.add.reduceat(self.values, self.mesh.cell_ptr[:-1])


@dataclass(frozen=True)
class TimeGrid:
    """Nodes ``0 = t_0 < t_1 < ... < t_N = T``."""

    nodes: tuple

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("a time grid needs at least two nodes")
        if t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if not (np.diff(t) > 0).all():
            raise ValueError("time nodes must be strictly increasing")
        object.__setattr__(self, "nodes", tuple(float(x) for x in t))

    @classmethod
    def uniform(cls, T, N):
        if int(N) < 1:
            raise ValueError(f"need N >= 1 time steps, got {N}")
        return cls(tuple(float(T) * np.arange(N + 1) / N))

    @property
    def N(self):
        return len(self.nodes) - 1

    @property
    def T(self):
        return self.nodes[-1]

    @property
    def steps(self):
        """``dt^{(n-1/2)}`` for n = 1..N."""
        return np.diff(np.asarray(self.nodes))

    def step(self, n):
        if not 1 <= n <= self.N:
            raise IndexError(f"step index {n} outside 1..{self.N}")
        return self.nodes[n] - self.nodes[n - 1]

    @property
    def max_step(self):
        return float(self.steps.max())

    def level_at(self, t):
        """Level n whose slab ``(t_{n-1}, t_n]`` contains ``t`` (0 at t <= 0)."""
        if t <= 0.0:
            return 0
        if t >= self.T:
            return self.N
        return int(np.searchsorted(np.asarray(self.nodes), t, side="left"))


@dataclass(eq=False)
class SpaceTimeField:
    """A :class:`DiscreteField` per level of a time grid, piecewise constant in time."""

    grid: TimeGrid
    levels: list

    def __post_init__(self):
        if len(self.levels) != self.grid.N + 1:
            raise ValueError(f"need {self.grid.N + 1} levels, got {len(self.levels)}")
        mesh = self.levels[0].mesh
        if any(v.mesh is not mesh for v in self.levels):
            raise ValueError("all levels must share one mesh")

    @property
    def mesh(self):
        return self.levels[0].mesh

    def at(self, t):
        return self.levels[self.grid.level_at(t)]


def time_quotient(u, n):
    """``(u^(n) - u^(n-1)) / dt^(n-1/2)`` for ``1 <= n <= N``."""
    if not 1 <= n <= u.grid.N:
        raise IndexError(f"level {n} outside 1..{u.grid.N}")
    return (u.levels[n] - u.levels[n - 1]) / u.grid.step(n)


# --- reconstruction and interpolation -------------------------------------

class PiecewiseConstant:
    """The function equal to ``values[K]`` on each cell ``K``."""

    def __init__(self, mesh, values):
        self.mesh = mesh
        self.values = np.asarray(values, dtype=float)

    def __call__(self, points):
        return self.values[self.mesh.locate(points)]

    def integral(self):
        return float(np.dot(self.mesh.cell_area, self.values))

    def integrate(self, f):
        """``int Pi v * f`` with one quadrature point per cell at ``x_K``."""
        fx = np.broadcast_to(f(self.mesh.cell_center), (self.mesh.n_cells,))
        return float(np.dot(self.mesh.cell_area, self.values * fx))

    def lp_norm(self, p=2.0):
        return float(np.dot(self.mesh.cell_area, np.abs(self.values) ** p) ** (1.0 / p))


def reconstruct(v):
    """Pi_D v: the piecewise constant function with the cell values of ``v``."""
    return PiecewiseConstant(v.mesh, v.cell)


# degree-2 rule on a triangle: the three side midpoints, equal weights
def _subtriangle_points(mesh):
    xk = mesh.cell_center[mesh.inc_cell]
    a = mesh.vertices[mesh.inc_vertices[:, 0]]
    b = mesh.vertices[mesh.inc_vertices[:, 1]]
    return [0.5 * (xk + a), 0.5 * (a + b), 0.5 * (b + xk)]


def cell_average(mesh, f):
    """Cell means of ``f`` by the degree-2 rule on each pyramid triangle."""
    meas = mesh.pyramid_measure
    vals = sum(np.broadcast_to(f(p), (mesh.n_incidences,)) for p in _subtriangle_points(mesh)) / 3.0
    return np.add.reduceat(meas * vals, mesh.cell_ptr[:-1]) / mesh.cell_area


def interpolate(mesh, f, quadrature="centroid"):
    """I_D f: cell and edge values of ``f`` by a fixed quadrature.

    ``f`` maps an ``(n, 2)`` array of points to ``n`` values.  With
    ``quadrature="centroid"`` the cell value is ``f(x_K)`` and the edge value
    ``f(xbar_sigma)``; both are exact means for affine ``f``.  ``"subdivision"``
    averages over the pyramid triangles (degree-2 rule) and uses two-point
    Gauss on edges, which suits rough data.
    """
    if quadrature == "centroid":
        cell = f(mesh.cell_center)
        edge = f(mesh.edge_midpoint)
    elif quadrature == "subdivision":
        cell = cell_average(mesh, f)
        a = mesh.vertices[mesh.edge_vertices[:, 0]]
        b = mesh.vertices[mesh.edge_vertices[:, 1]]
        g = 0.5 / np.sqrt(3.0)
        edge = 0.5 * (f((0.5 - g) * a + (0.5 + g) * b) + f((0.5 + g) * a + (0.5 - g) * b))
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    cell = np.broadcast_to(np.asarray(cell, dtype=float), (mesh.n_cells,)).copy()
    edge = np.broadcast_to(np.asarray(edge, dtype=float), (mesh.n_edges,)).copy()
    return DiscreteField(mesh, cell, edge)


# --- discrete gradient -----------------------------------------------------

def gradient_blocks(mesh):
    """Per valence group, the local pyramid-gradient matrices.

    Returns a list of ``(m, cells, inc, B)`` with ``B`` of shape
    ``(len(cells), m, d, m)``: ``B[k, s] @ y`` is the gradient on pyramid
    ``s`` of cell ``cells[k]`` for the local differences ``y_j = v_j - v_K``.
    """
    return _cached(mesh, "gradient_blocks", lambda: _gradient_blocks(mesh))


def _gradient_blocks(mesh):
    d = mesh.dim
    out = []
    for m, cells, inc in mesh.valence_groups():
        area = mesh.cell_area[cells]
        n = mesh.inc_normal[inc]                                   # (nc, m, d)
        G = mesh.edge_length[mesh.inc_edge[inc]][..., None] * n    # |sigma| n
        X = mesh.edge_midpoint[mesh.inc_edge[inc]] - mesh.cell_center[cells][:, None, :]
        dist = mesh.inc_dist[inc]
        P = np.transpose(G, (0, 2, 1)) / area[:, None, None]       # (nc, d, m)
        R = np.eye(m)[None] - np.einsum("kmi,kin->kmn", X, P)      # residual rows
        B = P[:, None, :, :] + (np.sqrt(d) / dist)[..., None, None] * (
            n[:, :, :, None] * R[:, :, None, :]
        )
        out.append((m, cells, inc, B))
    return out


def gradient_operator(mesh):
    """Sparse ``(d * n_pyramids, n_dofs)`` matrix mapping hybrid values to
    pyramid gradients (row ``d*i + a`` is component ``a`` on pyramid ``i``)."""
    return _cached(mesh, "gradient_operator", lambda: _gradient_operator(mesh))


def _gradient_operator(mesh):
    d = mesh.dim
    rows, cols, vals = [], [], []
    nc = mesh.n_cells
    for m, cells, inc, B in gradient_blocks(mesh):
        r = (d * inc[:, :, None] + np.arange(d)[None, None, :])    # (nk, m, d)
        # edge columns
        ecol = nc + mesh.inc_edge[inc]                             # (nk, m)
        rows.append(np.broadcast_to(r[..., None], B.shape).ravel())
        cols.append(np.broadcast_to(ecol[:, None, None, :], B.shape).ravel())
        vals.append(B.ravel())
        # cell column: minus the row sums over local edges
        rows.append(r.ravel())
        cols.append(np.broadcast_to(cells[:, None, None], r.shape).ravel())
        vals.append(-B.sum(axis=3).ravel())
    shape = (d * mesh.n_incidences, mesh.n_dofs)
    op = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    )
    op.sum_duplicates()
    op.sort_indices()
    return op


@dataclass(eq=False)
class PyramidGradient:
    """Gradient of a field: ``values[i]`` on pyramid ``i``, plus the cell parts."""

    mesh: object
    values: np.ndarray          # (n_pyramids, d)
    cell_gradient: np.ndarray   # (n_cells, d), the consistent part grad_K
    residual: np.ndarray        # (n_pyramids,), R_{K,sigma}

    @property
    def measure(self):
        return self.mesh.pyramid_measure


def cell_gradient(v):
    """Consistent part ``grad_K v = 1/|K| sum |sigma| v_sigma n_{K,sigma}``."""
    mesh = v.mesh
    contrib = (mesh.edge_length[mesh.inc_edge] * v.edge[mesh.inc_edge])[:, None] * mesh.inc_normal
    return np.add.reduceat(contrib, mesh.cell_ptr[:-1], axis=0) / mesh.cell_area[:, None]


def gradient(v):
    """Discrete gradient of ``v`` on every pyramid."""
    mesh = v.mesh
    gk = cell_gradient(v)
    xk = mesh.cell_center[mesh.inc_cell]
    dx = mesh.edge_midpoint[mesh.inc_edge] - xk
    res = (v.edge[mesh.inc_edge] - v.cell[mesh.inc_cell]
           - np.einsum("ij,ij->i", gk[mesh.inc_cell], dx))
    vals = gk[mesh.inc_cell] + (np.sqrt(mesh.dim) / mesh.inc_dist * res)[:, None] * mesh.inc_normal
    return PyramidGradient(mesh, vals, gk, res)


def pyramid_gradients(v):
    """Pyramid gradients through the assembled sparse operator, shape (n_pyramids, d)."""
    op = gradient_operator(v.mesh)
    return (op @ v.to_vector()).reshape(-1, v.mesh.dim)


# --- norms and forms -------------------------------------------------------

def l2_norm(v):
    """``||Pi_D v||_{L^2}``."""
    return float(np.sqrt(np.dot(v.mesh.cell_area, v.cell ** 2)))


def gradient_Lp_norm(v, p=2.0):
    """``||grad_D v||_{L^p}`` with the Euclidean norm of the vector gradient."""
    if not p >= 1.0:
        raise ValueError(f"exponent must be >= 1, got {p}")
    g = gradient(v).values
    mag = np.sqrt((g ** 2).sum(axis=1))
    meas = v.mesh.pyramid_measure
    if np.isinf(p):
        return float(mag.max())
    return float(np.dot(meas, mag ** p) ** (1.0 / p))


def norm_XD(v):
    """``||Pi_D v||_{L^2} + ||grad_D v||_{L^2}``."""
    return l2_norm(v) + gradient_Lp_norm(v, 2.0)


def sample_cells(mesh, coef):
    """Cell values of a coefficient: callables are sampled at ``x_K``."""
    if callable(coef):
        coef = coef(mesh.cell_center)
    return np.broadcast_to(np.asarray(coef, dtype=float), (mesh.n_cells,))


def mass_form(phi, v, w):
    """``sum_K |K| Phi_K v_K w_K`` with ``Phi_K = Phi(x_K)``."""
    mesh = v.mesh
    return float(np.dot(mesh.cell_area * sample_cells(mesh, phi), v.cell * w.cell))


def check_spd(tensors, what="tensor"):
    """Raise :class:`CoefficientError` unless every 2x2 tensor is symmetric
    positive definite."""
    t = np.asarray(tensors, dtype=float)
    sym = np.abs(t[:, 0, 1] - t[:, 1, 0]) <= 1e-12 * (np.abs(t).max(axis=(1, 2)) + 1e-300)
    det = t[:, 0, 0] * t[:, 1, 1] - t[:, 0, 1] * t[:, 1, 0]
    ok = sym & (t[:, 0, 0] > 0) & (det > 0)
    if not ok.all():
        i = int(np.flatnonzero(~ok)[0])
        raise CoefficientError(f"{what} {i} is not symmetric positive definite: {t[i].tolist()}")


def diffusion_form(tensors, v, w):
    """``sum_{K,sigma} |D_{K,sigma}| T_{K,sigma} grad_{K,sigma} v . grad_{K,sigma} w``.

    ``tensors`` has shape ``(n_pyramids, 2, 2)``; a single ``(2, 2)`` tensor
    is broadcast to every pyramid.
    """
    mesh = v.mesh
    t = np.broadcast_to(np.asarray(tensors, dtype=float), (mesh.n_incidences, mesh.dim, mesh.dim))
    check_spd(t, "diffusion tensor")
    gv = gradient(v).values
    gw = gv if w is v else gradient(w).values
    return float(np.dot(mesh.pyramid_measure, np.einsum("ia,iab,ib->i", gv, t, gw)))


def stiffness_matrix(mesh, tensors):
    """Sparse matrix of the diffusion form on hybrid unknowns."""
    op = gradient_operator(mesh)
    d = mesh.dim
    t = np.broadcast_to(np.asarray(tensors, dtype=float), (mesh.n_incidences, d, d))
    blk = t * mesh.pyramid_measure[:, None, None]
    rows = d * np.arange(mesh.n_incidences)[:, None, None] + np.arange(d)[None, :, None]
    cols = d * np.arange(mesh.n_incidences)[:, None, None] + np.arange(d)[None, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    T = sp.csr_matrix((blk.ravel(), (rows.ravel(), cols.ravel())), shape=(op.shape[0],) * 2)
    K = (op.T @ T @ op).tocsr()
    K.sort_indices()
    return K
