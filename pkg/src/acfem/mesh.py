"""Conforming 2D triangulations with newest-vertex bisection.

All meshes of a run live in one shared refinement ``Forest`` rooted at a
macro triangulation of a rectangle.  A ``TriMesh`` is an immutable antichain
cut of that forest, so the lattice operations on compatible meshes (finest
common coarsening, coarsest common refinement) are exact tree
intersections/unions, and vertex ids are stable across the whole family.

A forest cell stores its vertices as ``(a, b, c)`` where ``(a, b)`` is the
refinement edge and ``c`` the peak (newest) vertex; bisection at the
midpoint ``m`` of ``(a, b)`` produces the children ``(c, a, m)`` and
``(b, c, m)``, which preserves positive orientation and yields the classical
four similarity classes per macro cell (shape regularity).
"""
from dataclasses import dataclass

import numpy as np


class MeshError(Exception):
    """Invalid mesh topology, geometry, or incompatible forests."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle (x0, y0) .. (x1, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return self.width * self.height

    @property
    def diameter(self):
        return float(np.hypot(self.width, self.height))


class Forest:
    """Append-only binary refinement forest shared by compatible meshes."""

    def __init__(self, points, macro_cells, domain=None, subdivisions=None):
        self._points = [tuple(p) for p in points]
        self._points_arr = None
        self.cell_verts = [tuple(c) for c in macro_cells]
        self.cell_parent = [-1] * len(macro_cells)
        self.cell_children = [None] * len(macro_cells)
        self.cell_gen = [0] * len(macro_cells)
        self.n_roots = len(macro_cells)
        self._midpoints = {}
        self.vertex_parents = {}   # created vertex id -> (lo, hi) edge endpoints
        self.split_log = []        # parent cell ids in creation order
        self.domain = domain
        self.subdivisions = subdivisions
        self._next_mesh_id = 0

    @property
    def points(self):
        if self._points_arr is None or self._points_arr.shape[0] != len(self._points):
            self._points_arr = np.array(self._points, dtype=float)
        return self._points_arr

    def new_mesh_id(self):
        self._next_mesh_id += 1
        return self._next_mesh_id

    def midpoint(self, u, v):
        key = (u, v) if u < v else (v, u)
        vid = self._midpoints.get(key)
        if vid is None:
            pu = self._points[u]
            pv = self._points[v]
            vid = len(self._points)
            self._points.append((0.5 * (pu[0] + pv[0]), 0.5 * (pu[1] + pv[1])))
            self._midpoints[key] = vid
            self.vertex_parents[vid] = key
        return vid

    def has_midpoint(self, u, v):
        key = (u, v) if u < v else (v, u)
        return self._midpoints.get(key)

    def split(self, t):
        """Create (or fetch) the two children of cell t; returns their ids."""
        if self.cell_children[t] is not None:
            return self.cell_children[t]
        a, b, c = self.cell_verts[t]
        m = self.midpoint(a, b)
        i0 = len(self.cell_verts)
        self.cell_verts.append((c, a, m))
        self.cell_verts.append((b, c, m))
        gen = self.cell_gen[t] + 1
        self.cell_parent.extend((t, t))
        self.cell_children.extend((None, None))
        self.cell_gen.extend((gen, gen))
        self.cell_children[t] = (i0, i0 + 1)
        self.split_log.append(t)
        return i0, i0 + 1

    def ancestors_to_set(self, t, cells):
        """Walk up from t; return the first ancestor (or t) in cells, else None."""
        while t != -1:
            if t in cells:
                return t
            t = self.cell_parent[t]
        return None


def _cross2(u, v):
    return u[0] * v[1] - u[1] * v[0]


def _orient_macro(tri, points):
    """Order macro cell (i, j, k) as (a, b, c): refinement edge (a, b) is the
    longest edge (ties: smallest opposite-vertex id), orientation positive."""
    i, j, k = tri
    p = {v: np.asarray(points[v], dtype=float) for v in tri}
    # ensure counterclockwise
    cross = _cross2(p[j] - p[i], p[k] - p[i])
    if cross < 0:
        i, j, k = i, k, j
    elif cross == 0:
        raise MeshError(f"degenerate macro cell {tri}")
    tri = (i, j, k)
    best = None
    for opp_idx in range(3):
        e = [tri[m] for m in range(3) if m != opp_idx]
        length2 = float(np.sum((p[e[0]] - p[e[1]]) ** 2))
        key = (-length2, tri[opp_idx])
        if best is None or key < best[0]:
            best = (key, opp_idx)
    opp = best[1]
    c = tri[opp]
    rest = [tri[m] for m in range(3) if m != opp]
    for a, b in (rest, rest[::-1]):
        if _cross2(p[b] - p[a], p[c] - p[a]) > 0:
            return (a, b, c)
    raise MeshError(f"could not orient macro cell {tri}")


def build_macro_mesh(domain, subdivisions):
    """Structured macro triangulation of a rectangle.

    Each grid square is split along its bottom-left/top-right diagonal; the
    diagonal is every macro cell's longest edge and becomes its refinement
    edge, which makes the macro mesh matching for newest-vertex bisection.
    """
    nx, ny = int(subdivisions[0]), int(subdivisions[1])
    if nx < 1 or ny < 1:
        raise MeshError(f"subdivisions must be >= 1, got {(nx, ny)}")
    if not (domain.width > 0 and domain.height > 0):
        raise MeshError(f"degenerate rectangle {domain}")
    xs = np.linspace(domain.x0, domain.x1, nx + 1)
    ys = np.linspace(domain.y0, domain.y1, ny + 1)
    points = []
    for j in range(ny + 1):
        for i in range(nx + 1):
            points.append((float(xs[i]), float(ys[j])))

    def vid(i, j):
        return j * (nx + 1) + i

    cells = []
    for j in range(ny):
        for i in range(nx):
            v00 = vid(i, j)
            v10 = vid(i + 1, j)
            v01 = vid(i, j + 1)
            v11 = vid(i + 1, j + 1)
            cells.append(_orient_macro((v00, v10, v11), points))
            cells.append(_orient_macro((v00, v11, v01), points))
    forest = Forest(points, cells, domain=domain, subdivisions=(nx, ny))
    return TriMesh(forest, np.arange(len(cells)))


class TriMesh:
    """Immutable conforming triangulation: a cut of a refinement forest.

    Attributes
    ----------
    points : (nv, 2) coordinates of the vertices used by this mesh
    tris : (nc, 3) local vertex indices; (tris[:,0], tris[:,1]) is the
        refinement edge, tris[:,2] the peak; orientation is positive
    global_vertex : (nv,) forest vertex ids (sorted; local order == id order)
    cell_ids : (nc,) forest cell ids (sorted)
    edges : (ne, 2) local vertex index pairs (lo < hi)
    edge_cells : (ne, 2) adjacent cell indices, -1 for the outside
    edge_boundary : (ne,) bool
    """

    def __init__(self, forest, cell_ids):
        self.forest = forest
        self.mesh_id = forest.new_mesh_id()
        self.cell_ids = np.sort(np.asarray(cell_ids, dtype=np.int64))
        tri_global = np.array([forest.cell_verts[t] for t in self.cell_ids],
                              dtype=np.int64).reshape(-1, 3)
        self.global_vertex = np.unique(tri_global)
        self.points = forest.points[self.global_vertex]
        lookup = {int(g): i for i, g in enumerate(self.global_vertex)}
        self.tris = np.vectorize(lookup.__getitem__, otypes=[np.int64])(tri_global) \
            if tri_global.size else tri_global
        self._areas = None
        self._diams = None
        self._phys = {}  # id(bary) -> (bary ref, physical quad points)
        self._build_edges()
        self._validate()

    # -- construction helpers -------------------------------------------------

    def _build_edges(self):
        nc = self.tris.shape[0]
        pairs = {}
        for c in range(nc):
            a, b, p = self.tris[c]
            for u, v in ((a, b), (b, p), (p, a)):
                key = (u, v) if u < v else (v, u)
                pairs.setdefault(key, []).append(c)
        edges = []
        edge_cells = []
        for key in sorted(pairs):
            adj = pairs[key]
            if len(adj) > 2:
                raise MeshError(f"edge {key} shared by {len(adj)} cells")
            edges.append(key)
            edge_cells.append((adj[0], adj[1] if len(adj) == 2 else -1))
        self.edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        self.edge_cells = np.array(edge_cells, dtype=np.int64).reshape(-1, 2)
        self.edge_boundary = self.edge_cells[:, 1] == -1
        bmask = np.zeros(self.points.shape[0], dtype=bool)
        if self.edges.size:
            bmask[self.edges[self.edge_boundary].ravel()] = True
        self.vertex_boundary = bmask

    def _validate(self):
        if np.any(self.signed_areas() <= 0):
            raise MeshError("non-positive cell orientation")
        # hanging vertex: a mesh edge whose forest midpoint is used by the mesh
        used = set(int(g) for g in self.global_vertex)
        gv = self.global_vertex
        for u, v in self.edges:
            mid = self.forest.has_midpoint(int(gv[u]), int(gv[v]))
            if mid is not None and mid in used:
                raise MeshError(f"hanging vertex {mid} on edge {(u, v)}")

    # -- geometry --------------------------------------------------------------

    @property
    def num_cells(self):
        return self.tris.shape[0]

    @property
    def num_vertices(self):
        return self.points.shape[0]

    def cell_coords(self, cells=None):
        tris = self.tris if cells is None else self.tris[cells]
        return self.points[tris]

    def signed_areas(self):
        xy = self.points[self.tris]
        v1 = xy[:, 1] - xy[:, 0]
        v2 = xy[:, 2] - xy[:, 0]
        return 0.5 * (v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])

    def areas(self):
        if self._areas is None:
            self._areas = self.signed_areas()
        return self._areas

    def diameters(self):
        """Per-cell diameter = longest edge length."""
        if self._diams is None:
            xy = self.points[self.tris]
            d = xy[:, [1, 2, 0], :] - xy[:, [0, 1, 2], :]
            self._diams = np.sqrt(np.max(np.sum(d * d, axis=2), axis=1))
        return self._diams

    def edge_lengths(self):
        d = self.points[self.edges[:, 0]] - self.points[self.edges[:, 1]]
        return np.sqrt(np.sum(d * d, axis=1))

    def min_angle(self):
        xy = self.points[self.tris]
        angles = []
        for i in range(3):
            a = xy[:, (i + 1) % 3] - xy[:, i]
            b = xy[:, (i + 2) % 3] - xy[:, i]
            cosv = np.sum(a * b, axis=1) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cosv, -1.0, 1.0)))
        return float(np.min(angles))

    def interior_edge_keys(self):
        """Interior edges as global sorted vertex-id pairs."""
        gv = self.global_vertex
        keys = set()
        for e in np.nonzero(~self.edge_boundary)[0]:
            u, v = self.edges[e]
            keys.add((int(gv[u]), int(gv[v])))
        return keys

    # -- forest relations --------------------------------------------------------

    def cell_id_set(self):
        return set(int(t) for t in self.cell_ids)

    def is_refinement_of(self, other):
        """True if every cell of self descends from (or is) a cell of other."""
        if self.forest is not other.forest:
            raise MeshError("meshes from different forests are not comparable")
        coarse = other.cell_id_set()
        return all(self.forest.ancestors_to_set(int(t), coarse) is not None
                   for t in self.cell_ids)

    def containing_cells(self, finer):
        """For each cell of the finer mesh, the index of the self-cell containing it.

        Requires ``finer`` to be a refinement of ``self``.
        """
        coarse = {int(t): i for i, t in enumerate(self.cell_ids)}
        out = np.empty(finer.num_cells, dtype=np.int64)
        for i, t in enumerate(finer.cell_ids):
            anc = self.forest.ancestors_to_set(int(t), coarse)
            if anc is None:
                raise MeshError("mesh is not a refinement of the target")
            out[i] = coarse[anc]
        return out


def mesh_size(mesh):
    """Per-cell diameters and the global maximum."""
    h = mesh.diameters()
    return h, float(h.max()) if h.size else 0.0


def bisect(mesh, marked):
    """Bisect the marked cells (local indices) with conformity closure."""
    forest = mesh.forest
    nc = mesh.num_cells
    marked = list(marked)
    for c in marked:
        if not (0 <= int(c) < nc):
            raise MeshError(f"marked cell {c} out of range")
    if not marked:
        return TriMesh(forest, mesh.cell_ids.copy())

    leaves = mesh.cell_id_set()
    edge_map = {}

    def cell_edge_keys(t):
        a, b, c = forest.cell_verts[t]
        return (
            (a, b) if a < b else (b, a),
            (b, c) if b < c else (c, b),
            (c, a) if c < a else (a, c),
        )

    for t in leaves:
        for key in cell_edge_keys(t):
            edge_map.setdefault(key, set()).add(t)

    def refedge(t):
        a, b, _ = forest.cell_verts[t]
        return (a, b) if a < b else (b, a)

    def do_split(t):
        leaves.discard(t)
        for key in cell_edge_keys(t):
            edge_map[key].discard(t)
        for ch in forest.split(t):
            leaves.add(ch)
            for key in cell_edge_keys(ch):
                edge_map.setdefault(key, set()).add(ch)

    stack = [int(mesh.cell_ids[c]) for c in marked]
    guard = 0
    limit = 100 * (len(leaves) + len(stack) + 10)
    while stack:
        guard += 1
        if guard > limit:
            raise MeshError("bisection closure did not terminate")
        t = stack[-1]
        if t not in leaves:
            stack.pop()
            continue
        e = refedge(t)
        neighbors = edge_map.get(e, set()) - {t}
        if not neighbors:
            do_split(t)
            stack.pop()
        else:
            nb = next(iter(neighbors))
            if refedge(nb) == e:
                do_split(t)
                do_split(nb)
                stack.pop()
            else:
                stack.append(nb)
    return TriMesh(forest, np.fromiter(leaves, dtype=np.int64))


def uniform_refine(mesh, sweeps=1):
    """Bisect every cell, repeatedly; two sweeps quarter each triangle."""
    for _ in range(sweeps):
        mesh = bisect(mesh, range(mesh.num_cells))
    return mesh


def _check_compatible(a, b):
    if a.forest is not b.forest:
        raise MeshError("incompatible forests")


def finest_common_coarsening(a, b):
    """The lattice meet: on each region the coarser of the two cells wins."""
    _check_compatible(a, b)
    if a is b:
        return a
    forest = a.forest
    in_a = a.cell_id_set()
    in_b = b.cell_id_set()
    out = []
    stack = list(range(forest.n_roots))
    while stack:
        t = stack.pop()
        if t in in_a or t in in_b:
            out.append(t)
        else:
            ch = forest.cell_children[t]
            if ch is None:
                raise MeshError("meshes do not cover the forest consistently")
            stack.extend(ch)
    result = set(out)
    if result == in_a:
        return a
    if result == in_b:
        return b
    return TriMesh(forest, np.array(out, dtype=np.int64))


def coarsest_common_refinement(a, b):
    """The lattice join: on each region the finer of the two cells wins."""
    _check_compatible(a, b)
    if a is b:
        return a
    forest = a.forest
    in_a = a.cell_id_set()
    in_b = b.cell_id_set()
    out = []
    stack = [(r, False, False) for r in range(forest.n_roots)]
    while stack:
        t, cov_a, cov_b = stack.pop()
        cov_a = cov_a or t in in_a
        cov_b = cov_b or t in in_b
        if cov_a and cov_b:
            out.append(t)
        else:
            ch = forest.cell_children[t]
            if ch is None:
                raise MeshError("meshes do not cover the forest consistently")
            stack.extend((c, cov_a, cov_b) for c in ch)
    result = set(out)
    if result == in_a:
        return a
    if result == in_b:
        return b
    return TriMesh(forest, np.array(out, dtype=np.int64))


@dataclass(frozen=True)
class SkeletonSets:
    """Interior-edge sets keyed by global sorted vertex-id pairs."""

    interior: frozenset       # skeleton of the current mesh
    intersection: frozenset   # current int previous
    union: frozenset          # current cup previous


def skeleton_sets(cur, prev):
    """Interior skeleton of ``cur`` plus intersection/union with ``prev``."""
    _check_compatible(cur, prev)
    s_cur = frozenset(cur.interior_edge_keys())
    s_prev = frozenset(prev.interior_edge_keys())
    return SkeletonSets(interior=s_cur,
                        intersection=s_cur & s_prev,
                        union=s_cur | s_prev)


def write_vtk(mesh, target, point_data=None):
    """Write the mesh (and optional vertex scalars) as legacy ASCII VTK."""
    own = isinstance(target, (str, bytes))
    f = open(target, "w") if own else target
    try:
        f.write("# vtk DataFile Version 3.0\n")
        f.write("acfem mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.num_vertices} double\n")
        for x, y in mesh.points:
            f.write(f"{x!r} {y!r} 0.0\n")
        nc = mesh.num_cells
        f.write(f"CELLS {nc} {4 * nc}\n")
        for a, b, c in mesh.tris:
            f.write(f"3 {a} {b} {c}\n")
        f.write(f"CELL_TYPES {nc}\n")
        for _ in range(nc):
            f.write("5\n")
        if point_data:
            f.write(f"POINT_DATA {mesh.num_vertices}\n")
            for name, values in point_data.items():
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in values:
                    f.write(f"{float(v)!r}\n")
    finally:
        if own:
            f.close()
