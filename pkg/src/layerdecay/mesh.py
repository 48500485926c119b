"""Conforming triangular meshes with tagged boundary edges.

A :class:`Mesh` is immutable once built.  Vertex and triangle arrays are
stored read-only; derived connectivity (edges, incidence, diameters) is
computed lazily and cached on the instance.

Boundary edges carry one of two tags: :data:`GAMMA` for the part of the
boundary with inhomogeneous Dirichlet data and :data:`GAMMA_C` for its
complement, where the solution vanishes.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Mapping, Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, MeshFormatError, NonconformingMeshError

GAMMA = 1
GAMMA_C = 0

# local edge i of a triangle is opposite to local vertex i
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def as_cellset(cells) -> np.ndarray:
    """Normalize an iterable of triangle indices to a sorted, duplicate-free int array."""
    out = np.unique(np.asarray(cells, dtype=np.int64).ravel())
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    # (nx, ny, width, height) for meshes produced by generate_rectangle_mesh
    grid: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "vertices", _readonly(self.vertices, float).reshape(-1, 2))
        object.__setattr__(self, "triangles", _readonly(self.triangles, np.int64).reshape(-1, 3))
        be = np.sort(np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2), axis=1)
        object.__setattr__(self, "boundary_edges", _readonly(be, np.int64))
        tags = np.asarray(self.boundary_tags, dtype=np.int8).reshape(-1)
        if tags.shape[0] != be.shape[0]:
            raise InvalidArgumentError("boundary_tags must have one entry per boundary edge")
        if not np.all((tags == GAMMA) | (tags == GAMMA_C)):
            raise InvalidArgumentError("boundary tags must be GAMMA or GAMMA_C")
        object.__setattr__(self, "boundary_tags", _readonly(tags, np.int8))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        lengths = np.linalg.norm(p[:, LOCAL_EDGES[:, 0]] - p[:, LOCAL_EDGES[:, 1]], axis=2)
        return lengths.max(axis=1)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @property
    def h_min(self) -> float:
        return float(self.diameters.min())

    @cached_property
    def _edge_data(self):
        local = self.triangles[:, LOCAL_EDGES]  # (nt, 3, 2)
        flat = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
        return edges, inverse.reshape(-1, 3), counts

    @property
    def edges(self) -> np.ndarray:
        """All edges as sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """Edge index of local edge i (opposite local vertex i) for every triangle."""
        return self._edge_data[1]

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Triangle-by-vertex incidence matrix (0/1 entries)."""
        nt = self.n_triangles
        rows = np.repeat(np.arange(nt), 3)
        data = np.ones(3 * nt, dtype=np.int32)
        return sp.csr_matrix((data, (rows, self.triangles.ravel())), shape=(nt, self.n_vertices))

    @cached_property
    def vertex_to_elements(self) -> sp.csr_matrix:
        """Vertex-by-triangle incidence; row v lists the triangles touching vertex v."""
        return self.incidence.T.tocsr()

    def elements_of_vertex(self, v: int) -> np.ndarray:
        m = self.vertex_to_elements
        return m.indices[m.indptr[v]:m.indptr[v + 1]]

    @property
    def gamma_edges(self) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == GAMMA]

    @property
    def gamma_c_edges(self) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == GAMMA_C]

    def with_tags(self, tags) -> "Mesh":
        return Mesh(self.vertices, self.triangles, self.boundary_edges, tags, self.grid)


def check_conformity(mesh: Mesh) -> None:
    """Raise :class:`NonconformingMeshError` unless *mesh* is a valid conforming triangulation.

    The error carries the offending triangle index in ``.element`` when one
    can be identified.
    """
    tri = mesh.triangles
    nv = mesh.n_vertices

    def fail(msg, element=None):
        err = NonconformingMeshError(msg)
        err.element = element
        raise err

    if tri.size == 0:
        fail("mesh has no triangles")
    if tri.min() < 0 or tri.max() >= nv:
        bad = int(np.flatnonzero((tri < 0).any(1) | (tri >= nv).any(1))[0])
        fail(f"triangle {bad} references a vertex out of range", bad)
    used = np.zeros(nv, dtype=bool)
    used[tri.ravel()] = True
    if not used.all():
        fail(f"vertex {int(np.flatnonzero(~used)[0])} belongs to no triangle")

    area = mesh.signed_areas
    scale = mesh.diameters ** 2
    bad = np.flatnonzero(~(area > 1e-14 * scale))
    if bad.size:
        fail(f"triangle {int(bad[0])} is degenerate or negatively oriented", int(bad[0]))

    sorted_tri = np.sort(tri, axis=1)
    _, first, counts = np.unique(sorted_tri, axis=0, return_index=True, return_counts=True)
    if np.any(counts > 1):
        fail("duplicate triangle", int(first[np.argmax(counts > 1)]))

    edges, tri_edges, ecounts = mesh._edge_data
    if np.any(ecounts > 2):
        e = int(np.flatnonzero(ecounts > 2)[0])
        fail(f"edge {tuple(edges[e])} is shared by more than two triangles",
             int(np.flatnonzero((tri_edges == e).any(1))[0]))

    # positively oriented neighbours traverse a shared edge in opposite directions
    local = tri[:, LOCAL_EDGES]
    forward = np.zeros(edges.shape[0], dtype=np.int64)
    np.add.at(forward, tri_edges.ravel(), (local[..., 0] < local[..., 1]).ravel())
    folded = np.flatnonzero((ecounts == 2) & (forward != 1))
    if folded.size:
        e = int(folded[0])
        fail(f"triangles fold over edge {tuple(edges[e])}",
             int(np.flatnonzero((tri_edges == e).any(1))[-1]))

    boundary = edges[ecounts == 1]
    given = mesh.boundary_edges
    if given.shape[0] != np.unique(given, axis=0).shape[0]:
        fail("duplicate boundary edge")
    if boundary.shape[0] != given.shape[0] or not np.array_equal(
            np.unique(given, axis=0), boundary):
        fail("boundary edge list does not match the edges owned by exactly one triangle")

    # hanging nodes: a vertex strictly inside a boundary segment
    pts = mesh.vertices
    a, b = pts[boundary[:, 0]], pts[boundary[:, 1]]
    mid = 0.5 * (a + b)
    half = 0.5 * np.linalg.norm(b - a, axis=1)
    tree = cKDTree(pts)
    for i, cand in enumerate(tree.query_ball_point(mid, half * (1 + 1e-9))):
        for v in cand:
            if v in boundary[i]:
                continue
            d = b[i] - a[i]
            w = pts[v] - a[i]
            cross = d[0] * w[1] - d[1] * w[0]
            t = (d @ w) / (d @ d)
            if abs(cross) <= 1e-12 * (d @ d) and 0.0 < t < 1.0:
                fail(f"vertex {v} hangs on edge {tuple(boundary[i])}")

    # oriented boundary loop encloses exactly the triangulated area
    local = tri[:, LOCAL_EDGES].reshape(-1, 2)
    is_bnd = ecounts[tri_edges.ravel()] == 1
    ob = local[is_bnd]
    p, q = pts[ob[:, 0]], pts[ob[:, 1]]
    enclosed = 0.5 * np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1])
    total = area.sum()
    if not math.isclose(enclosed, total, rel_tol=1e-9):
        fail("triangles overlap: covered area exceeds the area enclosed by the boundary")


def generate_rectangle_mesh(width: float, height: float, nx: int, ny: int) -> Mesh:
    """Structured triangulation of ``[0, width] x [0, height]``.

    Every grid cell is split along its lower-left to upper-right diagonal.
    Cell ``(i, j)`` (column ``i``, row ``j``) owns triangles ``2*(j*nx+i)``
    and ``2*(j*nx+i)+1``.  All boundary edges start out tagged GAMMA_C.
    """
    if not (width > 0 and height > 0):
        raise InvalidArgumentError("width and height must be positive")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgumentError("nx and ny must be positive integers")
    nx, ny = int(nx), int(ny)
    xs = width * np.arange(nx + 1) / nx
    ys = height * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    I, J = np.meshgrid(np.arange(nx), np.arange(ny))
    I, J = I.ravel(), J.ravel()
    v00, v10, v11, v01 = vid(I, J), vid(I + 1, J), vid(I + 1, J + 1), vid(I, J + 1)
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)

    i = np.arange(nx)
    j = np.arange(ny)
    bottom = np.column_stack([vid(i, 0), vid(i + 1, 0)])
    right = np.column_stack([vid(nx, j), vid(nx, j + 1)])
    top = np.column_stack([vid(i, ny), vid(i + 1, ny)])
    left = np.column_stack([vid(0, j), vid(0, j + 1)])
    bedges = np.vstack([bottom, right, top, left])
    mesh = Mesh(vertices, triangles, bedges, np.full(len(bedges), GAMMA_C),
                grid=(nx, ny, float(width), float(height)))
    return mesh


def boundary_partition(mesh: Mesh, gamma_predicate: Callable) -> Mesh:
    """Retag boundary edges: GAMMA where ``gamma_predicate(x, y)`` holds at the edge midpoint.

    The predicate is called once with arrays of midpoint coordinates and must
    return something broadcastable to a boolean array.
    """
    pts = mesh.vertices
    mid = 0.5 * (pts[mesh.boundary_edges[:, 0]] + pts[mesh.boundary_edges[:, 1]])
    flags = np.broadcast_to(np.asarray(gamma_predicate(mid[:, 0], mid[:, 1]), dtype=bool),
                            (mid.shape[0],))
    return mesh.with_tags(np.where(flags, GAMMA, GAMMA_C))


def mesh_metrics(mesh: Mesh):
    """Return ``(h, h_min, min_angle)``; the angle is in radians."""
    p = mesh.vertices[mesh.triangles]
    angles = []
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
    return mesh.h, mesh.h_min, float(np.min(angles))


def select_cells_in_box(mesh: Mesh, box) -> np.ndarray:
    """Triangles whose three vertices lie in the closed box ``(xmin, xmax, ymin, ymax)``."""
    xmin, xmax, ymin, ymax = map(float, box)
    p = mesh.vertices
    # closed box with roundoff slack so grid-aligned boundaries are included
    slack = 1e-12 * max(1.0, float(np.abs(p).max()))
    inside = ((p[:, 0] >= xmin - slack) & (p[:, 0] <= xmax + slack)
              & (p[:, 1] >= ymin - slack) & (p[:, 1] <= ymax + slack))
    return as_cellset(np.flatnonzero(inside[mesh.triangles].all(axis=1)))


def extract_submesh(mesh: Mesh, cells):
    """Submesh made of *cells*; returns ``(submesh, vertex_map)``.

    ``vertex_map[i]`` is the parent index of submesh vertex ``i``.  Triangles
    keep the parent's local vertex order.  Boundary edges of the submesh are
    tagged GAMMA_C where they lie on the parent boundary and GAMMA elsewhere.
    """
    cells = as_cellset(cells)
    tri = mesh.triangles[cells]
    vertex_map, local = np.unique(tri, return_inverse=True)
    local = local.reshape(-1, 3)
    edges = np.sort(local[:, LOCAL_EDGES].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    parent_bnd = {tuple(e) for e in mesh.boundary_edges.tolist()}
    on_parent = np.array([tuple(sorted(vertex_map[e])) in parent_bnd for e in bnd.tolist()],
                         dtype=bool)
    sub = Mesh(mesh.vertices[vertex_map], local, bnd, np.where(on_parent, GAMMA_C, GAMMA))
    return sub, vertex_map


# --------------------------------------------------------------------------
# MSH 2.2 ASCII
# --------------------------------------------------------------------------

def export_msh(mesh: Mesh, tag_ids: Optional[Mapping[int, int]] = None, surface_tag: int = 100) -> str:
    """Serialize *mesh* as MSH 2.2 ASCII (nodes, 2-node lines, 3-node triangles).

    ``tag_ids`` maps GAMMA / GAMMA_C to the physical tag written on line
    elements (default GAMMA -> 1, GAMMA_C -> 2).
    """
    if tag_ids is None:
        tag_ids = {GAMMA: 1, GAMMA_C: 2}
    out = io.StringIO()
    out.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
    out.write(f"$Nodes\n{mesh.n_vertices}\n")
    for i, (x, y) in enumerate(mesh.vertices, start=1):
        out.write(f"{i} {x:.17g} {y:.17g} 0\n")
    out.write("$EndNodes\n")
    nb, nt = mesh.boundary_edges.shape[0], mesh.n_triangles
    out.write(f"$Elements\n{nb + nt}\n")
    eid = 1
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        phys = tag_ids[int(tag)]
        out.write(f"{eid} 1 2 {phys} {phys} {a + 1} {b + 1}\n")
        eid += 1
    for a, b, c in mesh.triangles:
        out.write(f"{eid} 2 2 {surface_tag} {surface_tag} {a + 1} {b + 1} {c + 1}\n")
        eid += 1
    out.write("$EndElements\n")
    return out.getvalue()


def write_msh(mesh: Mesh, path, tag_ids=None) -> None:
    with open(path, "w") as fh:
        fh.write(export_msh(mesh, tag_ids))


def import_msh(text, tag_map: Optional[Mapping[int, int]] = None) -> Mesh:
    """Parse an MSH 2.2 ASCII mesh.

    ``text`` is a string or a readable text stream.  ``tag_map`` maps the
    physical tag of line elements to GAMMA or GAMMA_C; unmapped tags and
    boundary edges without a line element default to GAMMA_C.  Line elements
    on interior edges (embedded curves) are ignored.  Triangles with negative
    orientation are reoriented.
    """
    if not isinstance(text, str):
        text = text.read()
    tag_map = dict(tag_map or {})
    lines = text.splitlines()
    n = len(lines)
    pos = 0
    sections = {}

    def header_line(i):
        return i + 1

    while pos < n:
        s = lines[pos].strip()
        if not s:
            pos += 1
            continue
        if not s.startswith("$"):
            raise MeshFormatError(f"unexpected content {s!r}", header_line(pos))
        name = s[1:]
        end = "$End" + name
        start = pos
        pos += 1
        while pos < n and lines[pos].strip() != end:
            pos += 1
        if pos >= n:
            raise MeshFormatError(f"section ${name} is not terminated", header_line(start))
        sections[name] = start
        pos += 1

    for required in ("MeshFormat", "Nodes", "Elements"):
        if required not in sections:
            raise MeshFormatError(f"missing section ${required}")

    i = sections["MeshFormat"] + 1
    fmt = lines[i].split()
    try:
        version, ftype = float(fmt[0]), int(fmt[1])
    except (IndexError, ValueError):
        raise MeshFormatError("malformed $MeshFormat header", header_line(i))
    if not (2.0 <= version < 3.0):
        raise MeshFormatError(f"unsupported MSH version {fmt[0]}", header_line(i))
    if ftype != 0:
        raise MeshFormatError("binary MSH files are not supported", header_line(i))

    i = sections["Nodes"] + 1
    try:
        nnodes = int(lines[i])
    except ValueError:
        raise MeshFormatError("malformed node count", header_line(i))
    ids = np.empty(nnodes, dtype=np.int64)
    coords = np.empty((nnodes, 2))
    for k in range(nnodes):
        i += 1
        parts = lines[i].split()
        if len(parts) < 3 or parts[0].startswith("$"):
            raise MeshFormatError("malformed node record", header_line(i))
        try:
            ids[k] = int(parts[0])
            coords[k] = float(parts[1]), float(parts[2])
        except ValueError:
            raise MeshFormatError("malformed node record", header_line(i))
    node_index = {int(v): k for k, v in enumerate(ids)}
    if len(node_index) != nnodes:
        raise MeshFormatError("duplicate node id", header_line(sections["Nodes"] + 1))

    i = sections["Elements"] + 1
    try:
        nelem = int(lines[i])
    except ValueError:
        raise MeshFormatError("malformed element count", header_line(i))
    tris, tri_lines, segs, seg_tags = [], [], [], []
    for _ in range(nelem):
        i += 1
        parts = lines[i].split()
        try:
            etype, ntags = int(parts[1]), int(parts[2])
            tags = [int(t) for t in parts[3:3 + ntags]]
            nodes = [int(t) for t in parts[3 + ntags:]]
        except (IndexError, ValueError):
            raise MeshFormatError("malformed element record", header_line(i))
        if etype not in (1, 2):
            raise MeshFormatError(f"unsupported element type {etype}", header_line(i))
        expected = 2 if etype == 1 else 3
        if len(nodes) != expected:
            raise MeshFormatError(f"element type {etype} needs {expected} nodes", header_line(i))
        try:
            local = [node_index[v] for v in nodes]
        except KeyError as exc:
            raise MeshFormatError(f"element references unknown node {exc.args[0]}", header_line(i))
        if etype == 2:
            tris.append(local)
            tri_lines.append(header_line(i))
        else:
            segs.append(local)
            seg_tags.append(tags[0] if tags else 0)
    if not tris:
        raise MeshFormatError("no triangles in $Elements", header_line(sections["Elements"]))

    tris = np.array(tris, dtype=np.int64)
    # drop nodes that belong to no triangle (geometry points, etc.)
    used, tris_local = np.unique(tris, return_inverse=True)
    tris = tris_local.reshape(-1, 3)
    renumber = -np.ones(nnodes, dtype=np.int64)
    renumber[used] = np.arange(used.size)
    verts = coords[used]

    p = verts[tris]
    signed = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
              - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = signed < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    edges = np.sort(tris[:, LOCAL_EDGES].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    boundary = uniq[counts == 1]
    btags = np.full(boundary.shape[0], GAMMA_C, dtype=np.int8)
    lookup = {tuple(e): k for k, e in enumerate(boundary.tolist())}
    for seg, tag in zip(segs, seg_tags):
        a, b = renumber[seg[0]], renumber[seg[1]]
        if a < 0 or b < 0:
            continue
        k = lookup.get((min(a, b), max(a, b)))
        if k is not None:
            btags[k] = tag_map.get(tag, GAMMA_C)

    mesh = Mesh(verts, tris, boundary, btags)
    try:
        check_conformity(mesh)
    except NonconformingMeshError as exc:
        el = getattr(exc, "element", None)
        line = tri_lines[el] if el is not None else header_line(sections["Elements"])
        raise MeshFormatError(f"nonconforming mesh: {exc}", line) from exc
    return mesh


def read_msh(path, tag_map=None) -> Mesh:
    with open(path) as fh:
        return import_msh(fh.read(), tag_map)
