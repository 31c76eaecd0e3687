"""Admissible 2D meshes for two-point-flux finite-volume schemes.

A mesh is a set of polygonal control volumes with representative points plus
the edge pencil of every cell.  The flux kernels only ever need, per edge,
the measure m(sigma), the distance d_sigma between the two cell points (or
from the cell point to a boundary edge), and the transmissibility
tau_sigma = m(sigma) / d_sigma.

``build_cartesian`` produces tensor-product grids whose cell centers satisfy
the two-point orthogonality requirement exactly.  ``load_mesh`` reads the
plain-text format documented in the README; loaded meshes are trusted to be
admissible, only positivity and consistency invariants are verified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

INTERIOR = "interior"
EXTERIOR = "exterior"

# relative tolerance for the cell-area / total-area consistency check
AREA_RTOL = 1e-12


class MeshFormatError(ValueError):
    """Mesh file could not be parsed; the message carries the line number."""


class MeshValidationError(ValueError):
    """A structural mesh invariant is violated."""


@dataclass
class Cell:
    id: int
    center: tuple[float, float]
    area: float


@dataclass
class Edge:
    id: int
    kind: str                  # INTERIOR or EXTERIOR
    cells: tuple[int, int]     # (K, L); L == -1 for exterior edges
    length: float              # m(sigma)
    distance: float            # d_sigma
    transmissibility: float    # m(sigma) / d_sigma, always recomputed
    d_owner: float             # distance from the owner center to the edge
    d_neighbor: float | None   # same for the neighbor; None for exterior


@dataclass
class Mesh:
    """Immutable-by-convention mesh; safe for concurrent reads once built."""

    cells: list[Cell]
    edges: list[Edge]
    cell_edges_int: list[list[int]]
    cell_edges_ext: list[list[int]]
    size: float                # max cell diameter
    xi: float                  # regularity constant, in (0, 1]
    total_area: float
    bbox: tuple[float, float, float, float]
    cartesian: tuple[int, int, float, float] | None = None
    # flat views used by the vectorized assembly kernels
    areas: np.ndarray = field(default=None, repr=False)
    centers: np.ndarray = field(default=None, repr=False)
    int_k: np.ndarray = field(default=None, repr=False)
    int_l: np.ndarray = field(default=None, repr=False)
    int_tau: np.ndarray = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_interior_edges(self) -> int:
        return int(self.int_k.size)


@dataclass
class ValidationReport:
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        if self.ok:
            return "ok"
        return "; ".join(self.violations)


def _finalize(cells, edges, total_area, bbox, cartesian=None) -> Mesh:
    ncells = len(cells)
    cell_edges_int = [[] for _ in range(ncells)]
    cell_edges_ext = [[] for _ in range(ncells)]
    for e in edges:
        if e.kind == INTERIOR:
            cell_edges_int[e.cells[0]].append(e.id)
            cell_edges_int[e.cells[1]].append(e.id)
        else:
            cell_edges_ext[e.cells[0]].append(e.id)

    xi = 1.0
    for e in edges:
        xi = min(xi, e.d_owner / e.distance)
        if e.d_neighbor is not None:
            xi = min(xi, e.d_neighbor / e.distance)

    size = 0.0
    for c in cells:
        perim = sum(edges[i].length for i in cell_edges_int[c.id])
        perim += sum(edges[i].length for i in cell_edges_ext[c.id])
        # bounding-box diagonal recovered from area and perimeter; exact for
        # rectangular cells, which is the supported mesh family
        size = max(size, math.sqrt(max((0.5 * perim) ** 2 - 2.0 * c.area, 0.0)))

    interior = [e for e in edges if e.kind == INTERIOR]
    return Mesh(
        cells=cells,
        edges=edges,
        cell_edges_int=cell_edges_int,
        cell_edges_ext=cell_edges_ext,
        size=size,
        xi=xi,
        total_area=total_area,
        bbox=bbox,
        cartesian=cartesian,
        areas=np.array([c.area for c in cells], dtype=float),
        centers=np.array([c.center for c in cells], dtype=float).reshape(ncells, 2),
        int_k=np.array([e.cells[0] for e in interior], dtype=np.intp),
        int_l=np.array([e.cells[1] for e in interior], dtype=np.intp),
        int_tau=np.array([e.transmissibility for e in interior], dtype=float),
    )


def build_cartesian(nx: int, ny: int, Lx: float, Ly: float) -> Mesh:
    """Uniform nx-by-ny grid on [0, Lx] x [0, Ly]; cell id = iy * nx + ix."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    if Lx <= 0 or Ly <= 0:
        raise ValueError("Lx and Ly must be positive")
    hx, hy = Lx / nx, Ly / ny
    cells = [
        Cell(iy * nx + ix, ((ix + 0.5) * hx, (iy + 0.5) * hy), hx * hy)
        for iy in range(ny)
        for ix in range(nx)
    ]
    edges: list[Edge] = []

    def add(kind, k, l, length, dist, d_owner, d_neighbor):
        edges.append(Edge(len(edges), kind, (k, l), length, dist,
                          length / dist, d_owner, d_neighbor))

    for iy in range(ny):
        for ix in range(nx - 1):
            add(INTERIOR, iy * nx + ix, iy * nx + ix + 1, hy, hx, hx / 2, hx / 2)
    for iy in range(ny - 1):
        for ix in range(nx):
            add(INTERIOR, iy * nx + ix, (iy + 1) * nx + ix, hx, hy, hy / 2, hy / 2)
    for ix in range(nx):
        add(EXTERIOR, ix, -1, hx, hy / 2, hy / 2, None)                 # bottom
        add(EXTERIOR, (ny - 1) * nx + ix, -1, hx, hy / 2, hy / 2, None)  # top
    for iy in range(ny):
        add(EXTERIOR, iy * nx, -1, hy, hx / 2, hx / 2, None)             # left
        add(EXTERIOR, iy * nx + nx - 1, -1, hy, hx / 2, hx / 2, None)    # right

    return _finalize(cells, edges, Lx * Ly, (0.0, 0.0, Lx, Ly),
                     cartesian=(nx, ny, Lx, Ly))


def _tokenized_lines(text):
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append((lineno, line.split()))
    return out


def load_mesh(text: str) -> Mesh:
    """Parse a MESH2D file.

    Transmissibilities are always recomputed from length and distance.  The
    file stores no per-side center-to-edge distances, so interior edges are
    assigned the even split d_sigma / 2 per side (exact for uniform Cartesian
    meshes) and exterior edges d_sigma.
    """
    lines = _tokenized_lines(text)
    pos = 0

    def next_line(what):
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError(f"unexpected end of file, expected {what}")
        lineno, toks = lines[pos]
        pos += 1
        return lineno, toks

    lineno, toks = next_line("MESH2D header")
    if toks != ["MESH2D"]:
        raise MeshFormatError(f"line {lineno}: expected 'MESH2D' header")

    lineno, toks = next_line("NCELLS count")
    if len(toks) != 2 or toks[0] != "NCELLS":
        raise MeshFormatError(f"line {lineno}: expected 'NCELLS <n>'")
    try:
        ncells = int(toks[1])
    except ValueError:
        raise MeshFormatError(f"line {lineno}: NCELLS count is not an integer") from None
    if ncells < 1:
        raise MeshFormatError(f"line {lineno}: NCELLS must be >= 1")

    cells: list[Cell | None] = [None] * ncells
    for _ in range(ncells):
        lineno, toks = next_line("cell record")
        if len(toks) != 4:
            raise MeshFormatError(f"line {lineno}: cell record needs 4 fields")
        try:
            cid = int(toks[0])
            cx, cy, area = (float(t) for t in toks[1:])
        except ValueError:
            raise MeshFormatError(f"line {lineno}: malformed cell record") from None
        if not 0 <= cid < ncells:
            raise MeshFormatError(f"line {lineno}: cell id {cid} out of range")
        if cells[cid] is not None:
            raise MeshFormatError(f"line {lineno}: duplicate cell id {cid}")
        cells[cid] = Cell(cid, (cx, cy), area)

    lineno, toks = next_line("NEDGES count")
    if len(toks) != 2 or toks[0] != "NEDGES":
        raise MeshFormatError(f"line {lineno}: expected 'NEDGES <m>'")
    try:
        nedges = int(toks[1])
    except ValueError:
        raise MeshFormatError(f"line {lineno}: NEDGES count is not an integer") from None

    edges: list[Edge | None] = [None] * nedges
    for _ in range(nedges):
        lineno, toks = next_line("edge record")
        if len(toks) != 5:
            raise MeshFormatError(f"line {lineno}: edge record needs 5 fields")
        try:
            eid, k, l = int(toks[0]), int(toks[1]), int(toks[2])
            length, dist = float(toks[3]), float(toks[4])
        except ValueError:
            raise MeshFormatError(f"line {lineno}: malformed edge record") from None
        if not 0 <= eid < nedges:
            raise MeshFormatError(f"line {lineno}: edge id {eid} out of range")
        if edges[eid] is not None:
            raise MeshFormatError(f"line {lineno}: duplicate edge id {eid}")
        if not length > 0:
            raise MeshValidationError(f"edge {eid}: nonpositive length {length}")
        if not dist > 0:
            raise MeshValidationError(f"edge {eid}: nonpositive distance {dist}")
        if not 0 <= k < ncells:
            raise MeshValidationError(f"edge {eid}: references missing cell {k}")
        if l == -1:
            edges[eid] = Edge(eid, EXTERIOR, (k, -1), length, dist,
                              length / dist, dist, None)
        else:
            if not 0 <= l < ncells:
                raise MeshValidationError(f"edge {eid}: references missing cell {l}")
            if l == k:
                raise MeshValidationError(f"edge {eid}: interior edge joins cell {k} to itself")
            edges[eid] = Edge(eid, INTERIOR, (k, l), length, dist,
                              length / dist, dist / 2, dist / 2)

    if pos != len(lines):
        lineno, _ = lines[pos]
        raise MeshFormatError(f"line {lineno}: trailing content after edge records")

    xs = [c.center[0] for c in cells]
    ys = [c.center[1] for c in cells]
    bbox = (min(xs), min(ys), max(xs), max(ys))
    mesh = _finalize(cells, edges, sum(c.area for c in cells), bbox)
    report = validate_mesh(mesh)
    if not report.ok:
        raise MeshValidationError(report.violations[0])
    return mesh


def format_mesh_file(mesh: Mesh) -> str:
    """Serialize to the MESH2D text format (17 significant digits)."""
    out = ["MESH2D", f"NCELLS {mesh.n_cells}"]
    for c in mesh.cells:
        out.append(f"{c.id} {c.center[0]:.17g} {c.center[1]:.17g} {c.area:.17g}")
    out.append(f"NEDGES {len(mesh.edges)}")
    for e in mesh.edges:
        out.append(f"{e.id} {e.cells[0]} {e.cells[1]} {e.length:.17g} {e.distance:.17g}")
    return "\n".join(out) + "\n"


def regularity_xi(mesh: Mesh) -> float:
    """min over cells K and their edges of d(x_K, sigma) / d_sigma."""
    xi = 1.0
    for e in mesh.edges:
        xi = min(xi, e.d_owner / e.distance)
        if e.d_neighbor is not None:
            xi = min(xi, e.d_neighbor / e.distance)
    return xi


def validate_mesh(mesh: Mesh) -> ValidationReport:
    """Check all structural invariants; returns the violations, never raises."""
    v: list[str] = []
    ncells = len(mesh.cells)
    xmin, ymin, xmax, ymax = mesh.bbox
    pad = 1e-12 * (abs(xmax - xmin) + abs(ymax - ymin) + 1.0)

    for c in mesh.cells:
        if not c.area > 0:
            v.append(f"cell {c.id}: nonpositive area {c.area}")
        x, y = c.center
        if not (xmin - pad <= x <= xmax + pad and ymin - pad <= y <= ymax + pad):
            v.append(f"cell {c.id}: center {c.center} outside bounding box")

    want_int = [[] for _ in range(ncells)]
    want_ext = [[] for _ in range(ncells)]
    for e in mesh.edges:
        k, l = e.cells
        if not e.length > 0:
            v.append(f"edge {e.id}: nonpositive length {e.length}")
        if not e.distance > 0:
            v.append(f"edge {e.id}: nonpositive distance {e.distance}")
        elif e.transmissibility != e.length / e.distance:
            v.append(f"edge {e.id}: transmissibility {e.transmissibility!r} "
                     f"!= length/distance {e.length / e.distance!r}")
        if e.kind == INTERIOR:
            if not (0 <= k < ncells and 0 <= l < ncells):
                v.append(f"edge {e.id}: references missing cell")
            elif k == l:
                v.append(f"edge {e.id}: interior edge joins cell {k} to itself")
            else:
                want_int[k].append(e.id)
                want_int[l].append(e.id)
        elif e.kind == EXTERIOR:
            if not 0 <= k < ncells:
                v.append(f"edge {e.id}: references missing cell")
            else:
                want_ext[k].append(e.id)
            if l != -1:
                v.append(f"edge {e.id}: exterior edge must use -1 for its neighbor")
        else:
            v.append(f"edge {e.id}: unknown kind {e.kind!r}")

    for cid in range(ncells):
        if sorted(mesh.cell_edges_int[cid]) != sorted(want_int[cid]) or \
           sorted(mesh.cell_edges_ext[cid]) != sorted(want_ext[cid]):
            v.append(f"cell {cid}: edge lists inconsistent with edge records")

    total = sum(c.area for c in mesh.cells)
    if abs(total - mesh.total_area) > AREA_RTOL * max(abs(mesh.total_area), 1e-300):
        v.append(f"total area {mesh.total_area!r} != sum of cell areas {total!r}")

    if not 0.0 < mesh.xi <= 1.0 + 1e-12:
        v.append(f"regularity constant xi = {mesh.xi} outside (0, 1]")

    return ValidationReport(v)
