"""Conforming triangular meshes with edge topology and newest-vertex bisection.

Local conventions used throughout the package:

* triangles are stored counterclockwise as vertex-index triples;
* local edge ``i`` of a triangle is the edge opposite local vertex ``i``;
* every edge has a ``k_plus`` neighbour (the adjacent triangle of smaller
  index) and, when interior, a ``k_minus`` neighbour.  The unit normal
  points from ``k_plus`` into ``k_minus`` (outward on the boundary) and the
  tangent is the normal rotated by +90 degrees.

Example
-------
>>> m = build_structured_square(2)
>>> m.n_vertices, m.n_triangles, m.n_edges
(9, 8, 16)
>>> fine = refine(m, [0])
>>> fine.n_triangles > m.n_triangles
True
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, GeometryError, PatchError

# local edge i joins local vertices (i+1, i+2)
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


@dataclass(frozen=True)
class Edge:
    """Read-only view of a single mesh edge."""

    index: int
    endpoints: tuple[int, int]
    length: float
    midpoint: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    k_plus: int
    k_minus: int | None

    @property
    def is_boundary(self) -> bool:
        return self.k_minus is None


@dataclass(frozen=True)
class ElementGeometry:
    """Affine data of one triangle.

    ``bary_grads[i]`` is the (constant) gradient of the barycentric
    coordinate attached to local vertex ``i``.
    """

    index: int
    area: float
    diameter: float
    bary_grads: np.ndarray

    @classmethod
    def from_vertices(cls, points, index=-1):
        p = np.asarray(points, dtype=float).reshape(3, 2)
        area, grads = _affine_data(p[None])
        if not area[0] > 0.0:
            raise GeometryError(f"degenerate or clockwise triangle (area={area[0]:g})")
        diam = max(np.linalg.norm(p[i] - p[j]) for i, j in ((0, 1), (1, 2), (2, 0)))
        return cls(index, float(area[0]), float(diam), grads[0])


def _affine_data(p):
    """Signed areas and barycentric gradients for an ``(nt, 3, 2)`` stack."""
    p0, p1, p2 = p[:, 0], p[:, 1], p[:, 2]
    area = 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))
    grads = np.empty(p.shape)
    for i in range(3):
        a = p[:, (i + 1) % 3]
        b = p[:, (i + 2) % 3]
        grads[:, i, 0] = a[:, 1] - b[:, 1]
        grads[:, i, 1] = b[:, 0] - a[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        grads /= (2.0 * area)[:, None, None]
    return area, grads


class Mesh:
    """Immutable conforming triangulation.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    triangles : array_like of int, shape (nt, 3)
        Counterclockwise vertex triples.
    refinement_edge : array_like of int, shape (nt,), optional
        Local index of the bisection edge of each triangle.  Defaults to the
        longest edge.
    generation : array_like of int, shape (nt,), optional
        Bisection depth of each triangle (zero for an initial mesh).
    parent : array_like of int, shape (nt,), optional
        For meshes produced by :func:`refine`, the index of the triangle of
        the input mesh that contains each triangle.

    Raises
    ------
    GeometryError
        If a triangle has non-positive signed area.
    ContractError
        If an edge is shared by more than two triangles.
    """

    def __init__(self, vertices, triangles, refinement_edge=None,
                 generation=None, parent=None):
        vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        nt = len(triangles)
        if nt == 0:
            raise ContractError("a mesh needs at least one triangle")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise ContractError("triangle references a vertex out of range")

        pts = vertices[triangles]
        area, grads = _affine_data(pts)
        if not np.all(area > 0.0):
            bad = int(np.flatnonzero(~(area > 0.0))[0])
            raise GeometryError(f"triangle {bad} has non-positive signed area {area[bad]:g}")

        lens = np.linalg.norm(pts[:, LOCAL_EDGES[:, 0]] - pts[:, LOCAL_EDGES[:, 1]], axis=2)
        if refinement_edge is None:
            refinement_edge = np.argmax(lens, axis=1)
        if generation is None:
            generation = np.zeros(nt, dtype=np.int64)

        self.vertices = vertices
        self.triangles = triangles
        self.refinement_edge = np.asarray(refinement_edge, dtype=np.int64).reshape(nt)
        self.generation = np.asarray(generation, dtype=np.int64).reshape(nt)
        self.parent = None if parent is None else np.asarray(parent, dtype=np.int64).reshape(nt)
        self.areas = area
        self.bary_grads = grads
        self.diameters = lens.max(axis=1)
        self._build_edges()
        for name in ("vertices", "triangles", "refinement_edge", "generation", "areas",
                     "bary_grads", "diameters", "edges", "edge_tris", "tri_edges",
                     "edge_lengths", "edge_midpoints", "edge_normals", "edge_tangents",
                     "is_boundary"):
            getattr(self, name).setflags(write=False)
        if self.parent is not None:
            self.parent.setflags(write=False)

    def _build_edges(self):
        tris = self.triangles
        nt, nv = len(tris), len(self.vertices)
        pairs = np.sort(tris[:, LOCAL_EDGES].reshape(-1, 2), axis=1)
        keys = pairs[:, 0] * nv + pairs[:, 1]
        ukeys, inverse = np.unique(keys, return_inverse=True)
        ne = len(ukeys)
        inverse = inverse.reshape(-1)
        counts = np.bincount(inverse, minlength=ne)
        if counts.max() > 2:
            raise ContractError("non-manifold mesh: an edge is shared by more than two triangles")

        edges = np.column_stack([ukeys // nv, ukeys % nv])
        owner = np.repeat(np.arange(nt), 3)
        k_plus = np.full(ne, nt, dtype=np.int64)
        np.minimum.at(k_plus, inverse, owner)
        k_minus = np.full(ne, -1, dtype=np.int64)
        np.maximum.at(k_minus, inverse, owner)
        k_minus[counts == 1] = -1

        p, q = self.vertices[edges[:, 0]], self.vertices[edges[:, 1]]
        d = q - p
        length = np.hypot(d[:, 0], d[:, 1])
        mid = 0.5 * (p + q)
        normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
        centroid = self.vertices[tris[k_plus]].mean(axis=1)
        flip = np.einsum("ij,ij->i", mid - centroid, normal) < 0.0
        normal[flip] *= -1.0

        self.edges = edges
        self.edge_tris = np.column_stack([k_plus, k_minus])
        self.tri_edges = inverse.reshape(nt, 3)
        self.edge_lengths = length
        self.edge_midpoints = mid
        self.edge_normals = normal
        self.edge_tangents = np.column_stack([-normal[:, 1], normal[:, 0]])
        self.is_boundary = k_minus < 0

    # -- sizes -----------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_boundary_edges(self) -> int:
        return int(self.is_boundary.sum())

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_triangles

    # -- single-entity views ----------------------------------------------
    def edge(self, i: int) -> Edge:
        kp, km = (int(k) for k in self.edge_tris[i])
        return Edge(
            index=int(i),
            endpoints=(int(self.edges[i, 0]), int(self.edges[i, 1])),
            length=float(self.edge_lengths[i]),
            midpoint=self.edge_midpoints[i].copy(),
            normal=self.edge_normals[i].copy(),
            tangent=self.edge_tangents[i].copy(),
            k_plus=kp,
            k_minus=None if km < 0 else km,
        )

    def geometry(self, t: int) -> ElementGeometry:
        return ElementGeometry(int(t), float(self.areas[t]), float(self.diameters[t]),
                               self.bary_grads[t].copy())

    def with_flipped_orientation(self) -> Mesh:
        """Copy whose edge normals and tangents are all negated.

        Only useful for checking that derived quantities do not depend on
        the sign convention.
        """
        other = object.__new__(Mesh)
        other.__dict__.update(self.__dict__)
        other.edge_normals = -self.edge_normals
        other.edge_tangents = -self.edge_tangents
        return other

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, in radians."""
        p = self.vertices[self.triangles]
        out = np.inf
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            out = min(out, float(np.arccos(np.clip(c, -1.0, 1.0)).min()))
        return out

    def check_conformity(self):
        """Raise :class:`ContractError` unless the mesh is conforming.

        Every edge must border one or two triangles and no vertex may lie in
        the interior of another triangle's edge (hanging node).
        """
        counts = np.bincount(self.tri_edges.ravel(), minlength=self.n_edges)
        if counts.min() < 1 or counts.max() > 2:
            raise ContractError("edge multiplicity outside {1, 2}")
        if not np.array_equal(counts == 1, self.is_boundary):
            raise ContractError("boundary flags inconsistent with edge multiplicity")
        for t in range(3):
            e = self.tri_edges[:, t]
            a = self.triangles[:, (t + 1) % 3]
            b = self.triangles[:, (t + 2) % 3]
            ends = np.sort(np.column_stack([a, b]), axis=1)
            if not np.array_equal(ends, self.edges[e]):
                raise ContractError("per-triangle edge triple disagrees with the edge list")
        # vertices used by no triangle, or lying on a boundary edge's interior
        used = np.zeros(self.n_vertices, dtype=bool)
        used[self.triangles.ravel()] = True
        if not used.all():
            raise ContractError("mesh has vertices not referenced by any triangle")
        bnd = np.flatnonzero(self.is_boundary)
        p = self.vertices[self.edges[bnd, 0]]
        q = self.vertices[self.edges[bnd, 1]]
        mids = 0.5 * (p + q)
        bverts = np.unique(self.edges[bnd])
        # a hanging node on the boundary would be a boundary vertex at some midpoint
        keys = {tuple(x) for x in self.vertices[bverts]}
        if any(tuple(m) in keys for m in mids):
            raise ContractError("hanging node on a boundary edge")


def element_patch(mesh: Mesh, edge) -> tuple[int, int]:
    """Return ``(k_plus, k_minus)`` for an interior edge.

    ``edge`` may be an :class:`Edge` or an edge index.  Boundary edges have
    no two-element patch and raise :class:`PatchError`.
    """
    i = edge.index if isinstance(edge, Edge) else int(edge)
    kp, km = mesh.edge_tris[i]
    if km < 0:
        raise PatchError(f"edge {i} lies on the boundary")
    return int(kp), int(km)


# -- structured initial meshes -------------------------------------------------

def _cells_to_mesh(n, lo, hi, keep_cell):
    """Triangulate the kept cells of an ``n_x x n_y`` grid.

    Every cell is split by its lower-left to upper-right diagonal; the
    right-angle vertex is stored first so the hypotenuse is local edge 0.
    """
    nx, ny = n
    (x0, y0), (x1, y1) = lo, hi

    def coord(i, j):
        x = x1 if i == nx else x0 + (x1 - x0) * i / nx
        y = y1 if j == ny else y0 + (y1 - y0) * j / ny
        return x, y

    cells = [(i, j) for j in range(ny) for i in range(nx) if keep_cell(i, j)]
    index = {}
    verts = []

    def vid(i, j):
        key = (i, j)
        if key not in index:
            index[key] = len(verts)
            verts.append(coord(i, j))
        return index[key]

    # number vertices row by row so that ordering does not depend on cells
    needed = set()
    for i, j in cells:
        needed.update({(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)})
    for j in range(ny + 1):
        for i in range(nx + 1):
            if (i, j) in needed:
                vid(i, j)

    tris = []
    for i, j in cells:
        p00, p10 = index[(i, j)], index[(i + 1, j)]
        p01, p11 = index[(i, j + 1)], index[(i + 1, j + 1)]
        tris.append((p10, p11, p00))
        tris.append((p01, p00, p11))
    nt = len(tris)
    return Mesh(np.array(verts), np.array(tris), refinement_edge=np.zeros(nt, dtype=np.int64))


def build_structured_square(n: int, corner_min=(0.0, 0.0), corner_max=(1.0, 1.0)) -> Mesh:
    """Uniform ``n x n`` criss-free triangulation of an axis-aligned rectangle."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ConfigurationError(f"subdivisions per side must be a positive integer, got {n!r}")
    (x0, y0), (x1, y1) = (tuple(map(float, corner_min)), tuple(map(float, corner_max)))
    if not (x1 > x0 and y1 > y0):
        raise ConfigurationError("corner_max must strictly dominate corner_min")
    return _cells_to_mesh((n, n), (x0, y0), (x1, y1), lambda i, j: True)


def build_lshape(n: int) -> Mesh:
    """Uniform triangulation of ``(0,2)^2`` minus ``[1,2]^2`` with cell side ``1/n``."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ConfigurationError(f"subdivisions per unit length must be a positive integer, got {n!r}")
    return _cells_to_mesh((2 * n, 2 * n), (0.0, 0.0), (2.0, 2.0),
                          lambda i, j: not (i >= n and j >= n))


# -- newest-vertex bisection ---------------------------------------------------

def refine(mesh: Mesh, marked) -> Mesh:
    """Newest-vertex bisection of the marked triangles plus conforming closure.

    The refinement edge of every marked triangle is flagged; flags then
    propagate (any triangle carrying a flagged edge must also flag its own
    refinement edge) until stable.  Each triangle with a flagged refinement
    edge is bisected, and its two children are bisected once more when their
    own refinement edges are flagged.  The newest vertex of each child is
    stored first, so children always have ``refinement_edge == 0``.

    The returned mesh keeps the input vertices (new midpoints are appended)
    and records in ``parent`` which input triangle contains each child.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                                  dtype=np.int64))
    nt = mesh.n_triangles
    if marked.size and (marked[0] < 0 or marked[-1] >= nt):
        raise ContractError("marked triangle index out of range")
    if marked.size == 0:
        return mesh

    # rotate every triangle so its refinement edge is local edge 0
    rot = (mesh.refinement_edge[:, None] + np.arange(3)[None, :]) % 3
    rows = np.arange(nt)[:, None]
    tris = mesh.triangles[rows, rot]
    tedge = mesh.tri_edges[rows, rot]

    flagged = np.zeros(mesh.n_edges, dtype=bool)
    flagged[tedge[marked, 0]] = True
    while True:
        need = flagged[tedge].any(axis=1) & ~flagged[tedge[:, 0]]
        if not need.any():
            break
        flagged[tedge[need, 0]] = True

    split = np.flatnonzero(flagged)
    mid = np.full(mesh.n_edges, -1, dtype=np.int64)
    mid[split] = mesh.n_vertices + np.arange(len(split))
    new_pts = 0.5 * (mesh.vertices[mesh.edges[split, 0]] + mesh.vertices[mesh.edges[split, 1]])
    vertices = np.vstack([mesh.vertices, new_pts])

    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    r0 = flagged[tedge[:, 0]]
    left = flagged[tedge[:, 2]]   # edge ab, refinement edge of child (m, a, b)
    right = flagged[tedge[:, 1]]  # edge ca, refinement edge of child (m, c, a)
    m = mid[tedge[:, 0]]
    ml = mid[tedge[:, 2]]
    mr = mid[tedge[:, 1]]

    slots = np.empty((nt, 4, 3), dtype=np.int64)
    valid = np.zeros((nt, 4), dtype=bool)
    gen = np.empty((nt, 4), dtype=np.int64)
    g = mesh.generation

    slots[:, 0] = np.where(r0[:, None],
                           np.where(left[:, None], np.column_stack([ml, m, a]), np.column_stack([m, a, b])),
                           np.column_stack([a, b, c]))
    gen[:, 0] = np.where(r0, np.where(left, g + 2, g + 1), g)
    valid[:, 0] = True
    slots[:, 1] = np.column_stack([ml, b, m])
    gen[:, 1] = g + 2
    valid[:, 1] = r0 & left
    slots[:, 2] = np.where(right[:, None], np.column_stack([mr, m, c]), np.column_stack([m, c, a]))
    gen[:, 2] = np.where(right, g + 2, g + 1)
    valid[:, 2] = r0
    slots[:, 3] = np.column_stack([mr, a, m])
    gen[:, 3] = g + 2
    valid[:, 3] = r0 & right

    parent = np.repeat(np.arange(nt), 4).reshape(nt, 4)
    new_tris = slots[valid]
    # untouched triangles keep their original refinement edge (stored rotated to 0)
    return Mesh(vertices, new_tris,
                refinement_edge=np.zeros(len(new_tris), dtype=np.int64),
                generation=gen[valid], parent=parent[valid])


def uniform_refine(mesh: Mesh) -> Mesh:
    """Bisect every triangle twice, halving the mesh size."""
    once = refine(mesh, np.arange(mesh.n_triangles))
    twice = refine(once, np.arange(once.n_triangles))
    # compose lineage so that ``parent`` points into the original mesh
    return Mesh(twice.vertices, twice.triangles, twice.refinement_edge,
                twice.generation, parent=once.parent[twice.parent])


# -- text dump -------------------------------------------------------------------

def format_mesh(mesh: Mesh) -> str:
    lines = [f"{mesh.n_vertices} {mesh.n_triangles}"]
    lines += [f"{x:.16e} {y:.16e}" for x, y in mesh.vertices]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    return "\n".join(lines) + "\n"


def atomic_write_text(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_mesh(mesh: Mesh, path):
    atomic_write_text(path, format_mesh(mesh))


def read_mesh(path) -> Mesh:
    """Load a mesh dump; clockwise triangles are reoriented.

    Refinement edges of a loaded mesh default to each triangle's longest edge.
    """
    with open(path) as fh:
        tokens = fh.read().split()
    try:
        nv, nt = int(tokens[0]), int(tokens[1])
        vals = tokens[2:]
        verts = np.array(vals[:2 * nv], dtype=float).reshape(nv, 2)
        tris = np.array(vals[2 * nv:2 * nv + 3 * nt], dtype=np.int64).reshape(nt, 3)
    except (IndexError, ValueError) as exc:
        raise ConfigurationError(f"malformed mesh file {path}: {exc}") from exc
    if len(vals) != 2 * nv + 3 * nt:
        raise ConfigurationError(f"malformed mesh file {path}: unexpected token count")
    p = verts[tris]
    area, _ = _affine_data(p)
    cw = area < 0
    tris[cw] = tris[cw][:, [0, 2, 1]]
    return Mesh(verts, tris)
