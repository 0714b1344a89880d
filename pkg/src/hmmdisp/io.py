"""Text formats: mesh files, legacy VTK cell data, CSV tables.

Mesh file::

    # comment
    mesh d=2
    vertices 4
    0 0
    1 0
    1 1
    0 1
    cells 1
    0 1 2 3

Cell vertex ids are zero-based and counter-clockwise.  Blank lines and
anything after ``#`` are ignored.

Field files are legacy VTK ASCII ``POLYDATA`` with one ``POLYGON`` per cell
and ``CELL_DATA`` scalars.  CSVs use ``%.16e`` for floats, so equal inputs
give byte-identical files.
"""

import csv
import os

import numpy as np

from .errors import InputError, MeshFormatError
from .mesh import build_mesh


def _lines(text):
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield i, line


def parse_mesh(text, *, validate=True):
    """Build a :class:`Mesh` from the text format above."""
    it = _lines(text)

    def take(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshFormatError(f"unexpected end of file, expected {what}") from None

    def header(word, what):
        no, line = take(what)
        parts = line.split()
        if len(parts) != 2 or parts[0] != word:
            raise MeshFormatError(f"expected '{word} <count>', got {line!r}", no)
        try:
            n = int(parts[1])
        except ValueError:
            raise MeshFormatError(f"bad count {parts[1]!r}", no) from None
        if n < 1:
            raise MeshFormatError(f"{word} count must be positive", no)
        return n

    no, line = take("'mesh d=2'")
    if line.split() != ["mesh", "d=2"]:
        raise MeshFormatError(f"expected header 'mesh d=2', got {line!r}", no)
    nv = header("vertices", "vertex section")
    verts = np.empty((nv, 2))
    for i in range(nv):
        no, line = take(f"vertex {i}")
        parts = line.split()
        if len(parts) != 2:
            raise MeshFormatError(f"vertex line needs 2 coordinates, got {len(parts)}", no)
        try:
            verts[i] = [float(p) for p in parts]
        except ValueError:
            raise MeshFormatError(f"bad coordinate in {line!r}", no) from None
        if not np.isfinite(verts[i]).all():
            raise MeshFormatError("non-finite coordinate", no)
    nc = header("cells", "cell section")
    cells = []
    for k in range(nc):
        no, line = take(f"cell {k}")
        try:
            ids = [int(p) for p in line.split()]
        except ValueError:
            raise MeshFormatError(f"bad vertex id in {line!r}", no) from None
        if len(ids) < 3:
            raise MeshFormatError("a cell needs at least 3 vertices", no)
        bad = [j for j in ids if not 0 <= j < nv]
        if bad:
            raise MeshFormatError(f"vertex id {bad[0]} out of range 0..{nv - 1}", no)
        cells.append(ids)
    extra = next(it, None)
    if extra is not None:
        raise MeshFormatError(f"trailing content {extra[1]!r}", extra[0])
    try:
        return build_mesh(verts, cells, validate=validate)
    except ValueError as exc:
        raise MeshFormatError(str(exc)) from None


def read_mesh(path, *, validate=True):
    if not os.path.isfile(path):
        raise InputError(f"mesh file not found: {path}")
    with open(path) as fh:
        return parse_mesh(fh.read(), validate=validate)


def format_mesh(mesh):
    out = ["mesh d=2", f"vertices {len(mesh.vertices)}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    out.append(f"cells {mesh.n_cells}")
    out += [" ".join(str(int(v)) for v in c) for c in mesh.cells]
    return "\n".join(out) + "\n"


def write_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write(format_mesh(mesh))


def format_vtk(mesh, fields, title="hmmdisp cell data"):
    """Legacy VTK ASCII polydata with one scalar array per ``fields`` entry."""
    nv = len(mesh.vertices)
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
           "DATASET POLYDATA", f"POINTS {nv} double"]
    out += [f"{x:.16e} {y:.16e} 0" for x, y in mesh.vertices]
    size = sum(len(c) + 1 for c in mesh.cells)
    out.append(f"POLYGONS {mesh.n_cells} {size}")
    out += [f"{len(c)} " + " ".join(str(int(v)) for v in c) for c in mesh.cells]
    out.append(f"CELL_DATA {mesh.n_cells}")
    for name, vals in fields.items():
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (mesh.n_cells,):
            raise ValueError(f"field {name!r} must have one value per cell")
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [f"{v:.16e}" for v in vals]
    return "\n".join(out) + "\n"


def write_vtk(path, mesh, fields, title="hmmdisp cell data"):
    with open(path, "w", newline="\n") as fh:
        fh.write(format_vtk(mesh, fields, title))


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.16e" % float(v)
    return str(v)


def write_csv(path, rows, columns=None):
    """Write dict rows; ``columns`` defaults to the keys of the first row."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([_cell(r.get(c, "")) for c in columns])
