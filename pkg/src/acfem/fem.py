"""P1 Lagrange spaces on TriMesh with homogeneous Dirichlet conditions.

Provides matrix assembly (mass, stiffness, weighted mass), L2 projection,
the discrete Laplacian, nested-space transfer via the refinement forest,
and quadrature L_p norms.  Dirichlet conditions are imposed by eliminating
boundary vertices, so every assembled system is SPD.

Fields are evaluated cellwise: anything passed to quadrature routines is
normalized to an object with ``mesh`` and ``eval(cells, bary) -> (nc, nq)``.
"""
import numpy as np

from acfem import kernels
from acfem.linalg import SparseSym, cg_solve
from acfem.mesh import coarsest_common_refinement
from acfem.quadrature import tri_rule


def F(v):
    """Double-well derivative F(v) = v^3 - v (the fixed nonlinearity)."""
    return v * v * v - v


def Fprime(v):
    """F'(v) = 3 v^2 - 1."""
    return 3.0 * v * v - 1.0


class FeSpace:
    """P1 space on a TriMesh; dofs are the interior vertices in id order."""

    def __init__(self, mesh):
        self.mesh = mesh
        interior = ~mesh.vertex_boundary
        self.vertex_of_dof = np.nonzero(interior)[0]
        self.dof_of_vertex = np.full(mesh.num_vertices, -1, dtype=np.int64)
        self.dof_of_vertex[self.vertex_of_dof] = np.arange(self.vertex_of_dof.size)
        self.ndof = int(self.vertex_of_dof.size)
        self._cache = {}

    @property
    def mesh_id(self):
        return self.mesh.mesh_id

    def zero_function(self):
        return FeFunction(self, np.zeros(self.ndof))

    def full_to_dofs(self, full):
        return np.asarray(full)[self.vertex_of_dof]

    def dofs_to_full(self, coeffs):
        full = np.zeros(self.mesh.num_vertices)
        full[self.vertex_of_dof] = coeffs
        return full

    # cached standard matrices
    def stiffness(self):
        if "A" not in self._cache:
            self._cache["A"] = assemble_stiffness(self)
        return self._cache["A"]

    def mass(self):
        if "M" not in self._cache:
            self._cache["M"] = assemble_mass(self)
        return self._cache["M"]

    def mass_full(self):
        if "Mfull" not in self._cache:
            self._cache["Mfull"] = assemble_mass(self, dirichlet=False)
        return self._cache["Mfull"]


class FeFunction:
    """P1 function: coefficient vector over the dofs of a space."""

    def __init__(self, space, coeffs):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != (space.ndof,):
            raise ValueError(f"coefficient vector has shape {coeffs.shape}, "
                             f"expected ({space.ndof},)")
        self.space = space
        self.coeffs = coeffs

    @property
    def mesh(self):
        return self.space.mesh

    def nodal_values(self):
        """Values at all mesh vertices (zero trace on the boundary)."""
        return self.space.dofs_to_full(self.coeffs)

    def eval(self, cells, bary):
        nodal = self.nodal_values()
        tris = self.mesh.tris if cells is None else self.mesh.tris[cells]
        return nodal[tris] @ np.asarray(bary).T

    def max_abs(self):
        """Exact L-infinity norm (P1: attained at a vertex)."""
        return float(np.max(np.abs(self.nodal_values()))) if self.mesh.num_vertices else 0.0


class BoundField:
    """A pointwise-evaluable field bound to a mesh for cellwise quadrature."""

    def __init__(self, mesh, fn):
        self.mesh = mesh
        self.fn = fn

    def eval(self, cells, bary):
        pts = phys_points(self.mesh, cells, bary)
        return self.fn(pts[..., 0], pts[..., 1])


class NodalField:
    """P1 field given by values at every vertex of a mesh (trace included)."""

    def __init__(self, mesh, nodal):
        self.mesh = mesh
        self.nodal = np.asarray(nodal, dtype=np.float64)

    def eval(self, cells, bary):
        tris = self.mesh.tris if cells is None else self.mesh.tris[cells]
        return self.nodal[tris] @ np.asarray(bary).T


class MappedField:
    """Pointwise composition g(field values); keeps cellwise evaluation."""

    def __init__(self, base, fn):
        self.base = base
        self.fn = fn

    @property
    def mesh(self):
        return self.base.mesh

    def eval(self, cells, bary):
        return self.fn(self.base.eval(cells, bary))


def as_field(f, mesh):
    """Normalize callables / FeFunctions to the cellwise field protocol."""
    if hasattr(f, "eval") and hasattr(f, "mesh"):
        if f.mesh is not mesh:
            raise ValueError("field is bound to a different mesh")
        return f
    if callable(f):
        return BoundField(mesh, f)
    raise TypeError(f"cannot interpret {type(f)} as a field")


def phys_points(mesh, cells, bary):
    """Physical coordinates of barycentric points: (nc, nq, 2).

    All-cell evaluations at catalogue quadrature rules are cached on the
    (immutable) mesh; the cache keeps a reference to the rule's array so the
    id key stays valid.
    """
    bary = np.asarray(bary)
    if cells is None:
        hit = mesh._phys.get(id(bary))
        if hit is not None:
            return hit[1]
        pts = np.einsum("qk,ckd->cqd", bary, mesh.cell_coords(None))
        mesh._phys[id(bary)] = (bary, pts)
        return pts
    return np.einsum("qk,ckd->cqd", bary, mesh.cell_coords(cells))


# -- assembly -----------------------------------------------------------------


def _scatter(space, local, dirichlet):
    mesh = space.mesh
    tris = mesh.tris
    nc = tris.shape[0]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    vals = local.reshape(nc * 9)
    if dirichlet:
        r = space.dof_of_vertex[rows]
        c = space.dof_of_vertex[cols]
        keep = (r >= 0) & (c >= 0)
        return SparseSym.from_coo(space.ndof, r[keep], c[keep], vals[keep])
    return SparseSym.from_coo(mesh.num_vertices, rows, cols, vals)


def assemble_stiffness(space, dirichlet=True):
    """A_ij = integral of grad(phi_i) . grad(phi_j)."""
    coords = np.ascontiguousarray(space.mesh.cell_coords())
    return _scatter(space, kernels.p1_stiffness_local(coords), dirichlet)


def assemble_mass(space, dirichlet=True):
    """M_ij = integral of phi_i phi_j (exact)."""
    coords = np.ascontiguousarray(space.mesh.cell_coords())
    return _scatter(space, kernels.p1_mass_local(coords), dirichlet)


def assemble_weighted_mass(space, weight, quad=None, dirichlet=True):
    """(M_w)_ij = integral of w phi_i phi_j by quadrature.

    Exact when w is a polynomial within the rule's degree; the default
    degree-4 rule is exact for w = F'(U_h) with P1 U_h.
    """
    if quad is None:
        quad = tri_rule(4)
    field = as_field(weight, space.mesh)
    wq = np.ascontiguousarray(field.eval(None, quad.bary))
    coords = np.ascontiguousarray(space.mesh.cell_coords())
    local = kernels.p1_weighted_mass_local(coords, wq, np.ascontiguousarray(quad.bary),
                                           np.ascontiguousarray(quad.weights))
    return _scatter(space, local, dirichlet)


def load_vector(space, f, quad=None, dirichlet=True):
    """Vector of integrals of f against the basis functions."""
    if quad is None:
        quad = tri_rule(10)
    mesh = space.mesh
    field = as_field(f, mesh)
    fq = field.eval(None, quad.bary)                      # (nc, nq)
    areas = mesh.areas()
    cell_loads = np.einsum("cq,q,qi->ci", fq, quad.weights, quad.bary)
    cell_loads *= areas[:, None]
    if dirichlet:
        out = np.zeros(space.ndof)
        dofs = space.dof_of_vertex[mesh.tris]
        keep = dofs >= 0
        np.add.at(out, dofs[keep], cell_loads[keep])
    else:
        out = np.zeros(mesh.num_vertices)
        np.add.at(out, mesh.tris.ravel(), cell_loads.ravel())
    return out


# -- projection / discrete operators ------------------------------------------


def l2_project(space, f, quad=None, tol=1e-12):
    """Orthogonal L2 projection of a pointwise-evaluable field onto the space."""
    b = load_vector(space, f, quad=quad)
    x = cg_solve(space.mass(), b, tol=tol)
    return FeFunction(space, x)


def discrete_laplacian(space, V):
    """The discrete Laplacian: (-lap_h V, X) = (grad V, grad X) for all X."""
    if V.space is not space:
        raise ValueError("function does not belong to the space")
    rhs = space.stiffness().matvec(V.coeffs)
    x = cg_solve(space.mass(), rhs, tol=1e-12)
    return FeFunction(space, -x)


def cell_gradients(U):
    """Constant per-cell gradient of a P1 function: (nc, 2)."""
    mesh = U.mesh
    coords = mesh.cell_coords()
    nodal = U.nodal_values()[mesh.tris]                   # (nc, 3)
    d = coords[:, [2, 0, 1], :] - coords[:, [1, 2, 0], :]  # edge opposite vertex i
    b = np.stack([-d[:, :, 1], d[:, :, 0]], axis=-1)      # 90-degree rotation
    areas2 = 2.0 * mesh.areas()
    return np.einsum("ci,cid->cd", nodal, b) / areas2[:, None]


# -- transfer between compatible spaces ----------------------------------------


def _interp_nodal(source_mesh, nodal, target_mesh):
    """Nodal values on a refinement: recursive midpoint averaging."""
    forest = source_mesh.forest
    known = {int(g): float(v) for g, v in zip(source_mesh.global_vertex, nodal)}

    def value(gid):
        if gid in known:
            return known[gid]
        parents = forest.vertex_parents.get(gid)
        if parents is None:
            raise ValueError(f"vertex {gid} unreachable from source mesh")
        val = 0.5 * (value(parents[0]) + value(parents[1]))
        known[gid] = val
        return val

    return np.array([value(int(g)) for g in target_mesh.global_vertex])


def cross_load(f, target_space):
    """Exact load vector (f, phi_i) of a P1 function against another space.

    Both functions are P1 on the coarsest common refinement, so the local
    mass matrices there integrate the product exactly.
    """
    source_mesh = f.mesh
    target_mesh = target_space.mesh
    if source_mesh is target_mesh:
        return target_space.mass().matvec(f.coeffs)
    join = coarsest_common_refinement(source_mesh, target_mesh)
    join_space = FeSpace(join)
    nodal_j = _interp_nodal(source_mesh, f.nodal_values(), join)
    y = join_space.mass_full().matvec(nodal_j)
    # apply the transpose of nodal interpolation target -> join:
    # push created-vertex weights to their edge parents (reverse id order)
    acc = {int(g): float(v) for g, v in zip(join.global_vertex, y)}
    target_ids = set(int(g) for g in target_mesh.global_vertex)
    forest = join.forest
    for gid in sorted(acc, reverse=True):
        if gid in target_ids:
            continue
        parents = forest.vertex_parents.get(gid)
        if parents is None:
            raise ValueError(f"vertex {gid} is not reachable from the target mesh")
        w = acc.pop(gid)
        acc[parents[0]] = acc.get(parents[0], 0.0) + 0.5 * w
        acc[parents[1]] = acc.get(parents[1], 0.0) + 0.5 * w
    load_full = np.array([acc.get(int(g), 0.0) for g in target_mesh.global_vertex])
    return load_full[target_space.vertex_of_dof]


def transfer(f, target_space):
    """Represent f on the target space.

    Exact nodal interpolation when the target refines the source; otherwise
    the function is carried to the coarsest common refinement and L2-projected
    down (exact quadrature: both factors are P1 on the join mesh).
    """
    source_mesh = f.mesh
    target_mesh = target_space.mesh
    if source_mesh is target_mesh:
        return FeFunction(target_space, f.coeffs.copy())
    if target_mesh.is_refinement_of(source_mesh):
        nodal = _interp_nodal(source_mesh, f.nodal_values(), target_mesh)
        return FeFunction(target_space, target_space.full_to_dofs(nodal))
    b = cross_load(f, target_space)
    x = cg_solve(target_space.mass(), b, tol=1e-12)
    return FeFunction(target_space, x)


# -- norms ---------------------------------------------------------------------


def norm_lp(f, mesh, p, quad=None):
    """Quadrature L_p norm over the mesh; p in {2, 4, 6, inf}.

    For p = inf the maximum is taken over quadrature points and vertices.
    """
    field = as_field(f, mesh)
    if quad is None:
        quad = tri_rule(10)
    vals = field.eval(None, quad.bary)
    if p == np.inf or p == "inf":
        corners = field.eval(None, np.eye(3))
        m = np.abs(vals).max() if vals.size else 0.0
        mc = np.abs(corners).max() if corners.size else 0.0
        return float(max(m, mc))
    if p not in (2, 4, 6):
        raise ValueError(f"p must be 2, 4, 6 or inf, got {p}")
    areas = mesh.areas()
    acc = np.einsum("cq,q,c->", np.abs(vals) ** p, quad.weights, areas)
    return float(acc ** (1.0 / p))


def fprime_sup(U):
    """Exact sup of |F'(U)| for P1 U: per-element closed form, no quadrature.

    On each element the values of U fill [min nodal, max nodal]; the sup of
    |3 v^2 - 1| over that interval is attained at an endpoint, or equals 1
    when U crosses zero on the element.
    """
    mesh = U.mesh
    nodal = U.nodal_values()[mesh.tris]
    lo = nodal.min(axis=1)
    hi = nodal.max(axis=1)
    m = np.maximum(np.abs(lo), np.abs(hi))
    mn = np.minimum(np.abs(lo), np.abs(hi))
    crossing = (lo <= 0.0) & (hi >= 0.0)
    per_cell = np.where(crossing,
                        np.maximum(np.abs(3.0 * m * m - 1.0), 1.0),
                        np.maximum(np.abs(3.0 * m * m - 1.0),
                                   np.abs(3.0 * mn * mn - 1.0)))
    return float(per_cell.max()) if per_cell.size else 1.0


def write_vtk_with_fields(mesh, target, fields):
    """VTK export of a mesh plus FeFunctions as POINT_DATA scalars."""
    from acfem.mesh import write_vtk
    point_data = {name: fn.nodal_values() for name, fn in fields.items()}
    write_vtk(mesh, target, point_data=point_data)
