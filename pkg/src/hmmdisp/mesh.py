"""Polygonal meshes: construction, generators, refinement and admissibility.

Cells are simple polygons given by counter-clockwise vertex lists.  Every
cell carries its barycentre as the centre point ``x_K``; the per-edge data
of a cell (outward unit normal, distance from ``x_K`` to the edge line) are
stored as flat *incidence* arrays in cell-major order, with
``cell_ptr[k]:cell_ptr[k + 1]`` selecting the incidences of cell ``k``.
Incidence ``i`` is also the index of the pyramid with apex ``x_K`` and base
the corresponding edge.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityError

ADMISSIBILITY_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable admissible polygonal mesh of a two-dimensional domain.

    Use :func:`build_mesh` or one of the generators rather than calling the
    constructor directly.
    """

    vertices: np.ndarray            # (nv, d)
    cells: tuple                    # per cell: tuple of vertex ids (CCW)
    edge_vertices: np.ndarray       # (ne, 2)
    edge_cells: np.ndarray          # (ne, 2), second column -1 on the boundary
    edge_length: np.ndarray         # (ne,)
    edge_midpoint: np.ndarray       # (ne, d)
    cell_area: np.ndarray           # (nc,)
    cell_center: np.ndarray         # (nc, d)
    cell_diameter: np.ndarray       # (nc,)
    cell_ptr: np.ndarray            # (nc + 1,)
    inc_cell: np.ndarray            # (ni,)
    inc_edge: np.ndarray            # (ni,)
    inc_neighbour: np.ndarray       # (ni,) cell across the edge, -1 on boundary
    inc_normal: np.ndarray          # (ni, d) outward unit normal
    inc_dist: np.ndarray            # (ni,) d_{K,sigma}
    inc_vertices: np.ndarray        # (ni, 2) edge endpoints in the cell's CCW order
    origin: dict = field(default=None)
    dim: int = 2

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_edges(self):
        return len(self.edge_length)

    @property
    def n_incidences(self):
        return len(self.inc_cell)

    @property
    def n_dofs(self):
        """Number of hybrid unknowns (one per cell plus one per edge)."""
        return self.n_cells + self.n_edges

    @property
    def h(self):
        """Mesh size: the largest cell diameter."""
        return float(self.cell_diameter.max())

    @property
    def boundary_edges(self):
        return np.flatnonzero(self.edge_cells[:, 1] < 0)

    @property
    def interior_edges(self):
        return np.flatnonzero(self.edge_cells[:, 1] >= 0)

    @property
    def pyramid_measure(self):
        """``|sigma| d_{K,sigma} / d`` for each incidence."""
        return self.edge_length[self.inc_edge] * self.inc_dist / self.dim

    @property
    def pyramid_barycenter(self):
        a = self.vertices[self.inc_vertices[:, 0]]
        b = self.vertices[self.inc_vertices[:, 1]]
        return (self.cell_center[self.inc_cell] + a + b) / 3.0

    @property
    def domain_area(self):
        """Area of the domain from the boundary edges (Green's formula)."""
        bnd = self.inc_neighbour < 0
        a = self.vertices[self.inc_vertices[bnd, 0]]
        b = self.vertices[self.inc_vertices[bnd, 1]]
        return 0.5 * float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))

    def cell_incidences(self, k):
        return slice(self.cell_ptr[k], self.cell_ptr[k + 1])

    def cell_edges(self, k):
        return self.inc_edge[self.cell_incidences(k)]

    def valence_groups(self):
        """Group cells by their number of edges.

        Returns a list of ``(m, cells, inc)`` where ``cells`` are the ids of
        the cells with ``m`` edges and ``inc`` is an ``(len(cells), m)``
        array of their incidence indices.
        """
        counts = np.diff(self.cell_ptr)
        groups = []
        for m in np.unique(counts):
            cells = np.flatnonzero(counts == m)
            inc = self.cell_ptr[cells][:, None] + np.arange(m)[None, :]
            groups.append((int(m), cells, inc))
        return groups

    def locate(self, points):
        """Return the id of the cell containing each point.

        Points on a shared edge are assigned to the lowest cell id. Raises
        ``ValueError`` for points outside the mesh.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.full(len(pts), -1, dtype=np.int64)
        tol = 1e-12 * max(self.h, 1.0)
        for start in range(0, len(pts), 256):
            p = pts[start:start + 256]
            ok = _inside_polygon(p, self, tol)
            found = ok.any(axis=1)
            out[start:start + 256] = np.where(found, ok.argmax(axis=1), -1)
        if (out < 0).any():
            bad = pts[np.flatnonzero(out < 0)[0]]
            raise ValueError(f"point {tuple(bad)} lies outside the mesh")
        return out


def _inside_polygon(p, mesh, tol):
    # crossing-number test per cell; works for non-convex cells too
    a = mesh.vertices[mesh.inc_vertices[:, 0]]
    b = mesh.vertices[mesh.inc_vertices[:, 1]]
    py = p[:, 1][:, None]
    px = p[:, 0][:, None]
    cond = (a[None, :, 1] > py) != (b[None, :, 1] > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = a[None, :, 0] + (py - a[None, :, 1]) * (b[None, :, 0] - a[None, :, 0]) / (
            b[None, :, 1] - a[None, :, 1]
        )
    cross = cond & (px < xint)
    parity = np.add.reduceat(cross.astype(np.int64), mesh.cell_ptr[:-1], axis=1) % 2 == 1
    # points exactly on the boundary of the cell count as inside
    rel = p[:, None, :] - a[None, :, :]
    t = b - a
    L2 = np.einsum("ij,ij->i", t, t)
    proj = np.clip(np.einsum("pij,ij->pi", rel, t) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    near = a[None] + proj[..., None] * t[None] - p[:, None, :]
    on_edge = np.einsum("pij,pij->pi", near, near) <= tol * tol
    on = np.logical_or.reduceat(on_edge, mesh.cell_ptr[:-1], axis=1)
    return parity | on


def _polygon_area_centroid(xy):
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cr = x * yn - xn * y
    area = 0.5 * cr.sum()
    if area == 0.0:
        return 0.0, xy.mean(axis=0)
    cx = ((x + xn) * cr).sum() / (6.0 * area)
    cy = ((y + yn) * cr).sum() / (6.0 * area)
    return area, np.array([cx, cy])


def build_mesh(vertices, cells, *, origin=None, validate=True):
    """Build a :class:`Mesh` from vertex coordinates and CCW cell polygons.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    cells : sequence of sequences of int
        Zero-based vertex ids of each cell, counter-clockwise.
    origin : dict, optional
        Generator metadata, required by :func:`refine_uniform`.
    validate : bool
        Raise :class:`AdmissibilityError` when a cell is degenerate, an edge
        is collapsed, or a barycentre does not see every edge from inside.
    """
    verts = np.array(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise ValueError("vertices must have shape (n, 2)")
    if not np.isfinite(verts).all():
        raise ValueError("vertex coordinates must be finite")
    cells = tuple(tuple(int(v) for v in c) for c in cells)
    if not cells:
        raise ValueError("a mesh needs at least one cell")

    issues = []
    edge_index = {}
    edge_vertices = []
    edge_cells = []
    areas, centers, diams = [], [], []
    ptr = [0]
    inc_cell, inc_edge, inc_verts = [], [], []
    for k, poly in enumerate(cells):
        if len(poly) < 3:
            raise AdmissibilityError([f"cell {k}: fewer than 3 vertices"])
        if len(set(poly)) != len(poly):
            issues.append(f"cell {k}: repeated vertex")
        if min(poly) < 0 or max(poly) >= len(verts):
            raise AdmissibilityError([f"cell {k}: vertex id out of range"])
        xy = verts[list(poly)]
        area, center = _polygon_area_centroid(xy)
        scale = np.ptp(xy, axis=0).max() ** 2
        if area < 0.0 and abs(area) > 1e-14 * scale:
            issues.append(f"cell {k}: inconsistent orientation (clockwise vertex order)")
        elif abs(area) <= 1e-14 * scale:
            issues.append(f"cell {k}: degenerate polygon (zero area)")
        areas.append(area)
        centers.append(center)
        diff = xy[:, None, :] - xy[None, :, :]
        diams.append(np.sqrt((diff ** 2).sum(axis=-1)).max())
        for j in range(len(poly)):
            a, b = poly[j], poly[(j + 1) % len(poly)]
            key = (a, b) if a < b else (b, a)
            e = edge_index.get(key)
            if e is None:
                e = len(edge_vertices)
                edge_index[key] = e
                edge_vertices.append((a, b))
                edge_cells.append([k, -1])
            else:
                if edge_cells[e][1] >= 0:
                    raise AdmissibilityError(
                        [f"edge {e}: shared by more than two cells ({edge_cells[e][0]}, "
                         f"{edge_cells[e][1]}, {k})"]
                    )
                if edge_vertices[e] == (a, b):
                    issues.append(
                        f"edge {e}: cells {edge_cells[e][0]} and {k} traverse it in the "
                        "same direction (inconsistent orientation)"
                    )
                edge_cells[e][1] = k
            inc_cell.append(k)
            inc_edge.append(e)
            inc_verts.append((a, b))
        ptr.append(len(inc_cell))

    edge_vertices = np.array(edge_vertices, dtype=np.int64)
    edge_cells = np.array(edge_cells, dtype=np.int64)
    ea = verts[edge_vertices[:, 0]]
    eb = verts[edge_vertices[:, 1]]
    edge_length = np.sqrt(((eb - ea) ** 2).sum(axis=1))
    edge_midpoint = 0.5 * (ea + eb)

    inc_cell = np.array(inc_cell, dtype=np.int64)
    inc_edge = np.array(inc_edge, dtype=np.int64)
    inc_verts = np.array(inc_verts, dtype=np.int64)
    cell_center = np.array(centers)
    tang = verts[inc_verts[:, 1]] - verts[inc_verts[:, 0]]
    length = edge_length[inc_edge]
    safe = np.where(length > 0, length, 1.0)
    normal = np.stack([tang[:, 1], -tang[:, 0]], axis=1) / safe[:, None]
    normal[length == 0] = np.nan
    dist = np.einsum("ij,ij->i", edge_midpoint[inc_edge] - cell_center[inc_cell], normal)

    other = edge_cells[inc_edge]
    neighbour = np.where(other[:, 0] == inc_cell, other[:, 1], other[:, 0])

    for e in np.flatnonzero(edge_length <= 1e-14 * max(np.ptp(verts, axis=0).max(), 1e-300)):
        issues.append(f"edge {e}: collapsed (zero length)")
    for i in np.flatnonzero(~(dist > 0)):
        if edge_length[inc_edge[i]] > 0:
            issues.append(
                f"cell {inc_cell[i]}: centre not strictly inside (d_K,sigma = "
                f"{dist[i]:.3e} for edge {inc_edge[i]})"
            )

    mesh = Mesh(
        vertices=verts,
        cells=cells,
        edge_vertices=edge_vertices,
        edge_cells=edge_cells,
        edge_length=edge_length,
        edge_midpoint=edge_midpoint,
        cell_area=np.array(areas),
        cell_center=cell_center,
        cell_diameter=np.array(diams),
        cell_ptr=np.array(ptr, dtype=np.int64),
        inc_cell=inc_cell,
        inc_edge=inc_edge,
        inc_neighbour=neighbour,
        inc_normal=normal,
        inc_dist=dist,
        inc_vertices=inc_verts,
        origin=dict(origin) if origin is not None else None,
    )
    for arr in (mesh.vertices, mesh.edge_vertices, mesh.edge_cells, mesh.edge_length,
                mesh.edge_midpoint, mesh.cell_area, mesh.cell_center, mesh.cell_diameter,
                mesh.cell_ptr, mesh.inc_cell, mesh.inc_edge, mesh.inc_neighbour,
                mesh.inc_normal, mesh.inc_dist, mesh.inc_vertices):
        arr.flags.writeable = False
    if validate and issues:
        raise AdmissibilityError(issues)
    return mesh


def _check_domain(domain):
    x0, x1, y0, y1 = (float(v) for v in domain)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"invalid rectangle {domain!r}")
    return x0, x1, y0, y1


def _grid(nx, ny, domain):
    if int(nx) < 1 or int(ny) < 1:
        raise ValueError(f"cell counts must be >= 1, got nx={nx}, ny={ny}")
    x0, x1, y0, y1 = _check_domain(domain)
    xs = x0 + (x1 - x0) * np.arange(nx + 1) / nx
    ys = y0 + (y1 - y0) * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()])


def _quad_cells(nx, ny):
    cells = []
    for j in range(ny):
        for i in range(nx):
            v = j * (nx + 1) + i
            cells.append((v, v + 1, v + nx + 2, v + nx + 1))
    return cells


def generate_rect_mesh(nx, ny, domain=(0.0, 1.0, 0.0, 1.0)):
    """Uniform ``nx`` by ``ny`` quadrilateral mesh of an axis-aligned rectangle."""
    verts = _grid(nx, ny, domain)
    origin = {"kind": "rect", "nx": int(nx), "ny": int(ny), "domain": tuple(map(float, domain))}
    return build_mesh(verts, _quad_cells(nx, ny), origin=origin)


def generate_tri_mesh(nx, ny, domain=(0.0, 1.0, 0.0, 1.0)):
    """Each cell of the ``nx`` by ``ny`` grid split along its rising diagonal."""
    verts = _grid(nx, ny, domain)
    cells = []
    for a, b, c, d in _quad_cells(nx, ny):
        cells.append((a, b, c))
        cells.append((a, c, d))
    origin = {"kind": "tri", "nx": int(nx), "ny": int(ny), "domain": tuple(map(float, domain))}
    return build_mesh(verts, cells, origin=origin)


def generate_perturbed_mesh(nx, ny, domain=(0.0, 1.0, 0.0, 1.0), amplitude=0.2, seed=0):
    """Quadrilateral mesh with randomly displaced interior vertices.

    Each interior vertex moves by ``amplitude * min(dx, dy)`` times a uniform
    draw in ``[-1, 1]`` per coordinate. Boundary vertices stay fixed, so the
    domain is unchanged. The result depends only on the arguments.
    """
    if not 0.0 <= amplitude < 0.5:
        raise ValueError(f"amplitude must lie in [0, 0.5), got {amplitude}")
    verts = _grid(nx, ny, domain)
    x0, x1, y0, y1 = _check_domain(domain)
    step = min((x1 - x0) / nx, (y1 - y0) / ny)
    rng = np.random.default_rng(seed)
    shift = rng.uniform(-1.0, 1.0, size=verts.shape) * (amplitude * step)
    i = np.tile(np.arange(nx + 1), ny + 1)
    j = np.repeat(np.arange(ny + 1), nx + 1)
    interior = (i > 0) & (i < nx) & (j > 0) & (j < ny)
    if amplitude > 0:
        verts[interior] += shift[interior]
    origin = {
        "kind": "perturbed", "nx": int(nx), "ny": int(ny),
        "domain": tuple(map(float, domain)), "amplitude": float(amplitude), "seed": int(seed),
    }
    return build_mesh(verts, _quad_cells(nx, ny), origin=origin)


_GENERATORS = {
    "rect": lambda o, f: generate_rect_mesh(f * o["nx"], f * o["ny"], o["domain"]),
    "tri": lambda o, f: generate_tri_mesh(f * o["nx"], f * o["ny"], o["domain"]),
    "perturbed": lambda o, f: generate_perturbed_mesh(
        f * o["nx"], f * o["ny"], o["domain"], o["amplitude"], o["seed"]
    ),
}


def regenerate(mesh, factor=1):
    """Rebuild a generated mesh with its cell counts multiplied by ``factor``."""
    if not mesh.origin or mesh.origin.get("kind") not in _GENERATORS:
        raise ValueError("mesh has no generator metadata; only generated meshes can be refined")
    return _GENERATORS[mesh.origin["kind"]](mesh.origin, int(factor))


def refine_uniform(mesh):
    """Next member of a generated mesh family: twice the cells per direction.

    Perturbed families keep the same amplitude fraction and seed.
    """
    return regenerate(mesh, 2)


@dataclass(frozen=True)
class MeshQuality:
    max_diam_ratio: float       # max over (K, sigma) of diam(K) / d_{K,sigma}
    max_edges_per_cell: int
    min_dist: float             # min d_{K,sigma}
    h: float

    def as_dict(self):
        return {
            "max_diam_ratio": self.max_diam_ratio,
            "max_edges_per_cell": self.max_edges_per_cell,
            "min_dist": self.min_dist,
            "h": self.h,
        }


def check_admissibility(mesh, rtol=ADMISSIBILITY_RTOL):
    """Verify the cell and mesh invariants and return quality metrics.

    Checked per cell: positive measure, positive distances, unit outward
    normals, ``sum |sigma| d_{K,sigma} = d |K|`` and ``sum |sigma| n = 0``.
    Checked per edge: positive length, two incident cells with opposite
    normals for interior edges. Globally the cell measures must add up to
    the area enclosed by the boundary edges.

    Raises
    ------
    AdmissibilityError
        Listing every violated invariant with its cell/edge id.
    """
    issues = []
    d = mesh.dim
    length = mesh.edge_length[mesh.inc_edge]

    for e in np.flatnonzero(~(mesh.edge_length > 0)):
        issues.append(f"edge {e}: collapsed (zero length)")
    for k in np.flatnonzero(~(mesh.cell_area > 0)):
        issues.append(f"cell {k}: non-positive measure {mesh.cell_area[k]:.3e}")
    for i in np.flatnonzero(~(mesh.inc_dist > 0)):
        issues.append(f"cell {mesh.inc_cell[i]}: d_K,sigma <= 0 on edge {mesh.inc_edge[i]}")
    nrm = np.sqrt((mesh.inc_normal ** 2).sum(axis=1))
    for i in np.flatnonzero(~(np.abs(nrm - 1.0) <= 1e-12)):
        issues.append(f"cell {mesh.inc_cell[i]}: normal on edge {mesh.inc_edge[i]} is not unit")

    starts = mesh.cell_ptr[:-1]
    sum_ld = np.add.reduceat(length * mesh.inc_dist, starts)
    bad = ~(np.abs(sum_ld - d * mesh.cell_area) <= rtol * d * np.abs(mesh.cell_area))
    for k in np.flatnonzero(bad):
        issues.append(f"cell {k}: sum |sigma| d_K,sigma = {sum_ld[k]!r} != d|K| = "
                      f"{d * mesh.cell_area[k]!r}")
    sum_ln = np.add.reduceat(length[:, None] * mesh.inc_normal, starts, axis=0)
    perim = np.add.reduceat(length, starts)
    bad = ~(np.sqrt((sum_ln ** 2).sum(axis=1)) <= rtol * perim)
    for k in np.flatnonzero(bad):
        issues.append(f"cell {k}: sum |sigma| n_K,sigma does not vanish")

    # outward: the normal points from x_K towards the edge midpoint side
    out = np.einsum("ij,ij->i", mesh.edge_midpoint[mesh.inc_edge] - mesh.cell_center[mesh.inc_cell],
                    mesh.inc_normal)
    for i in np.flatnonzero(~(out > 0)):
        issues.append(f"cell {mesh.inc_cell[i]}: normal on edge {mesh.inc_edge[i]} points inward")

    count = np.bincount(mesh.inc_edge, minlength=mesh.n_edges)
    interior = mesh.edge_cells[:, 1] >= 0
    for e in np.flatnonzero(count != np.where(interior, 2, 1)):
        issues.append(f"edge {e}: appears in {count[e]} cell edge lists")
    if not issues:
        first = np.full(mesh.n_edges, -1, dtype=np.int64)
        second = np.full(mesh.n_edges, -1, dtype=np.int64)
        for i, e in enumerate(mesh.inc_edge):
            if first[e] < 0:
                first[e] = i
            else:
                second[e] = i
        ie = np.flatnonzero(interior)
        opp = mesh.inc_normal[first[ie]] + mesh.inc_normal[second[ie]]
        for e in ie[np.abs(opp).max(axis=1) > 1e-12]:
            issues.append(f"edge {e}: normals of its two cells are not opposite")
        for e in ie[mesh.edge_cells[ie, 0] == mesh.edge_cells[ie, 1]]:
            issues.append(f"edge {e}: both sides belong to the same cell")

    total = float(mesh.cell_area.sum())
    omega = mesh.domain_area
    if not abs(total - omega) <= rtol * abs(omega):
        issues.append(f"cell measures sum to {total!r}, boundary encloses {omega!r}")

    if issues:
        raise AdmissibilityError(issues)

    diam = mesh.cell_diameter[mesh.inc_cell]
    return MeshQuality(
        max_diam_ratio=float((diam / mesh.inc_dist).max()),
        max_edges_per_cell=int(np.diff(mesh.cell_ptr).max()),
        min_dist=float(mesh.inc_dist.min()),
        h=mesh.h,
    )
