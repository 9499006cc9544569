"""Assembly oracles, projection, transfer, norms, discrete Laplacian."""
import numpy as np
import pytest

from acfem import kernels
from acfem.fem import (BoundField, FeFunction, FeSpace, Fprime,
                       MappedField, NodalField, assemble_mass,
                       assemble_stiffness, assemble_weighted_mass,
                       cell_gradients, cross_load, discrete_laplacian,
                       fprime_sup, l2_project, norm_lp, transfer)
from acfem.mesh import Rect, bisect, build_macro_mesh, uniform_refine
from acfem.quadrature import tri_rule

UNIT = Rect(0.0, 0.0, 1.0, 1.0)


@pytest.fixture
def macro22():
    mesh = build_macro_mesh(UNIT, (2, 2))
    return FeSpace(mesh)


def test_local_stiffness_reference_triangle():
    coords = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    K = kernels.p1_stiffness_local(coords)[0]
    expected = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    assert np.max(np.abs(K - expected)) < 1e-14


def test_local_mass_reference_triangle():
    coords = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    M = kernels.p1_mass_local(coords)[0]
    expected = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 24.0
    assert np.max(np.abs(M - expected)) < 1e-14


def test_global_matrices_match_quadrature_recomputation():
    mesh = uniform_refine(build_macro_mesh(UNIT, (2, 2)), 1)
    space = FeSpace(mesh)
    A = assemble_stiffness(space, dirichlet=False).to_dense()
    M = assemble_mass(space, dirichlet=False).to_dense()
    quad = tri_rule(2)
    nv = mesh.num_vertices
    A2 = np.zeros((nv, nv))
    M2 = np.zeros((nv, nv))
    areas = mesh.areas()
    for c in range(mesh.num_cells):
        idx = mesh.tris[c]
        for i in range(3):
            ei = np.zeros(nv)
            ei[idx[i]] = 1.0
            gi = _hat_gradient(mesh, c, i)
            for j in range(3):
                gj = _hat_gradient(mesh, c, j)
                A2[idx[i], idx[j]] += areas[c] * float(gi @ gj)
                vals_i = np.eye(3)[i] @ quad.bary.T
                vals_j = np.eye(3)[j] @ quad.bary.T
                M2[idx[i], idx[j]] += areas[c] * float(
                    np.sum(quad.weights * vals_i * vals_j))
    assert np.max(np.abs(A - A2)) < 1e-12
    assert np.max(np.abs(M - M2)) < 1e-12


def _hat_gradient(mesh, cell, local_i):
    xy = mesh.points[mesh.tris[cell]]
    j, k = [(1, 2), (2, 0), (0, 1)][local_i]
    d = xy[k] - xy[j]
    area2 = 2.0 * mesh.areas()[cell]
    return np.array([-d[1], d[0]]) / area2


def test_stiffness_kernel_contains_constants(macro22):
    A_full = assemble_stiffness(macro22, dirichlet=False)
    ones = np.ones(macro22.mesh.num_vertices)
    assert np.max(np.abs(A_full.matvec(ones))) < 1e-13


def test_single_interior_dof_stiffness(macro22):
    A = macro22.stiffness()
    assert macro22.ndof == 1
    assert A.to_dense()[0, 0] == pytest.approx(4.0, abs=1e-14)


def test_total_mass_is_domain_area():
    mesh = build_macro_mesh(Rect(0.0, 0.0, 2.0, 1.5), (3, 2))
    space = FeSpace(mesh)
    M = assemble_mass(space, dirichlet=False)
    ones = np.ones(mesh.num_vertices)
    assert float(ones @ M.matvec(ones)) == pytest.approx(3.0, rel=1e-13)


def test_mass_scaling_quadratic():
    m1 = build_macro_mesh(UNIT, (2, 2))
    m2 = build_macro_mesh(Rect(0.0, 0.0, 3.0, 3.0), (2, 2))
    M1 = assemble_mass(FeSpace(m1), dirichlet=False).to_dense()
    M2 = assemble_mass(FeSpace(m2), dirichlet=False).to_dense()
    assert np.allclose(M2, 9.0 * M1, rtol=1e-13)


def test_weighted_mass_unit_weight(macro22):
    M = macro22.mass().to_dense()
    W = assemble_weighted_mass(macro22, lambda x, y: np.ones_like(x)).to_dense()
    assert np.allclose(W, M, rtol=1e-13)


def test_weighted_mass_fprime_at_plus_minus_one(macro22):
    # F'(v) = 2 at v = +-1
    W = assemble_weighted_mass(macro22, lambda x, y: np.full_like(x, 2.0))
    assert np.allclose(W.to_dense(), 2.0 * macro22.mass().to_dense(), rtol=1e-13)


def test_weighted_mass_fprime_at_zero(macro22):
    U0 = macro22.zero_function()
    W = assemble_weighted_mass(macro22, MappedField(U0, Fprime))
    assert np.allclose(W.to_dense(), -macro22.mass().to_dense(), rtol=1e-13)


def test_l2_project_reproduces_space_members(macro22):
    fine = FeSpace(uniform_refine(macro22.mesh, 2))
    rng = np.random.default_rng(0)
    f = FeFunction(fine, rng.standard_normal(fine.ndof))
    p = l2_project(fine, f)
    assert np.max(np.abs(p.coeffs - f.coeffs)) < 1e-10


def test_l2_project_zero(macro22):
    p = l2_project(macro22, lambda x, y: np.zeros_like(x))
    assert np.array_equal(p.coeffs, np.zeros(1))


def test_l2_project_linear_hand_value(macro22):
    # 1-dof system solved by hand: (x, phi)/(phi, phi) = (1/8)/(1/8) = 1
    p = l2_project(macro22, lambda x, y: x)
    assert p.coeffs[0] == pytest.approx(1.0, rel=1e-12)


def test_l2_projection_idempotent_and_nonexpansive():
    space = FeSpace(build_macro_mesh(UNIT, (8, 8)))
    f = lambda x, y: np.tanh(3.0 * (x - 0.4)) * np.cos(2.0 * y)
    p1 = l2_project(space, f)
    p2 = l2_project(space, p1)
    assert np.max(np.abs(p1.coeffs - p2.coeffs)) < 1e-9
    assert norm_lp(p1, space.mesh, 2) <= norm_lp(BoundField(space.mesh, f),
                                                 space.mesh, 2) * (1 + 1e-10)


def test_discrete_laplacian_zero(macro22):
    z = discrete_laplacian(macro22, macro22.zero_function())
    assert np.array_equal(z.coeffs, np.zeros(1))


def test_discrete_laplacian_identity_random():
    space = FeSpace(uniform_refine(build_macro_mesh(UNIT, (4, 4)), 1))
    A = space.stiffness()
    M = space.mass()
    rng = np.random.default_rng(1)
    for _ in range(10):
        V = FeFunction(space, rng.standard_normal(space.ndof))
        lap = discrete_laplacian(space, V)
        # (-lap_h V, X) = (grad V, grad X) for all X <=> -M lap = A V
        lhs = -M.matvec(lap.coeffs)
        rhs = A.matvec(V.coeffs)
        assert np.linalg.norm(lhs - rhs) <= 1e-8 * max(1.0, np.linalg.norm(rhs))


def test_discrete_laplacian_single_dof_scalar(macro22):
    V = FeFunction(macro22, np.array([3.0]))
    lap = discrete_laplacian(macro22, V)
    A11 = macro22.stiffness().to_dense()[0, 0]
    M11 = macro22.mass().to_dense()[0, 0]
    assert lap.coeffs[0] == pytest.approx(-(A11 / M11) * 3.0, rel=1e-11)


def test_transfer_identity(macro22):
    V = FeFunction(macro22, np.array([2.5]))
    W = transfer(V, macro22)
    assert np.array_equal(W.coeffs, V.coeffs)


def test_transfer_midpoint_rule(macro22):
    fine = FeSpace(bisect(macro22.mesh, range(macro22.mesh.num_cells)))
    V = FeFunction(macro22, np.array([2.0]))
    W = transfer(V, fine)
    nodal_c = V.nodal_values()
    forest = macro22.mesh.forest
    for i, gid in enumerate(fine.mesh.global_vertex):
        gid = int(gid)
        parents = forest.vertex_parents.get(gid)
        if parents is None:
            continue
        src = {int(g): nodal_c[j] for j, g in
               enumerate(macro22.mesh.global_vertex)}
        if parents[0] in src and parents[1] in src:
            expect = 0.5 * (src[parents[0]] + src[parents[1]])
            assert W.nodal_values()[i] == pytest.approx(expect, abs=1e-14)


def test_transfer_roundtrip_exact():
    coarse = FeSpace(build_macro_mesh(UNIT, (4, 4)))
    fine = FeSpace(uniform_refine(coarse.mesh, 2))
    rng = np.random.default_rng(2)
    V = FeFunction(coarse, rng.standard_normal(coarse.ndof))
    back = transfer(transfer(V, fine), coarse)
    assert np.max(np.abs(back.coeffs - V.coeffs)) < 1e-10


def test_transfer_preserves_norms_on_refinement():
    coarse = FeSpace(build_macro_mesh(UNIT, (4, 4)))
    fine = FeSpace(uniform_refine(coarse.mesh, 1))
    rng = np.random.default_rng(3)
    V = FeFunction(coarse, rng.standard_normal(coarse.ndof))
    W = transfer(V, fine)
    for p in (2, 4, 6):
        assert norm_lp(V, coarse.mesh, p) == pytest.approx(
            norm_lp(W, fine.mesh, p), rel=1e-12)
    assert V.max_abs() == pytest.approx(W.max_abs(), rel=1e-13)


def test_transfer_between_non_nested_meshes_is_l2_projection():
    # disjointly refined pair: neither refines the other, so the transfer
    # routes through the coarsest common refinement and projects down;
    # the defining property (f - Pf, chi) = 0 is checked on the join
    base = bisect(build_macro_mesh(UNIT, (2, 2)), [0, 1, 4])
    mesh_a = bisect(base, [0, 2])
    mesh_b = bisect(base, [5, 7])
    assert not mesh_a.is_refinement_of(mesh_b)
    assert not mesh_b.is_refinement_of(mesh_a)
    space_a = FeSpace(mesh_a)
    space_b = FeSpace(mesh_b)
    rng = np.random.default_rng(8)
    f = FeFunction(space_a, rng.standard_normal(space_a.ndof))
    pf = transfer(f, space_b)
    from acfem.mesh import coarsest_common_refinement
    join = coarsest_common_refinement(mesh_a, mesh_b)
    join_space = FeSpace(join)
    f_j = transfer(f, join_space)
    pf_j = transfer(pf, join_space)
    diff = f_j.coeffs - pf_j.coeffs
    M_j = join_space.mass()
    for i in range(space_b.ndof):
        chi = np.zeros(space_b.ndof)
        chi[i] = 1.0
        chi_j = transfer(FeFunction(space_b, chi), join_space)
        val = abs(float(chi_j.coeffs @ M_j.matvec(diff)))
        assert val < 1e-10


def test_cross_load_matches_direct_mass(macro22):
    fine = FeSpace(uniform_refine(macro22.mesh, 1))
    rng = np.random.default_rng(4)
    V = FeFunction(fine, rng.standard_normal(fine.ndof))
    # load of V against the coarse basis, computed two ways
    b1 = cross_load(V, macro22)
    quad = tri_rule(2)
    b2 = np.zeros(macro22.ndof)
    hat = FeFunction(macro22, np.ones(1))
    vals_v = V.eval(None, quad.bary)
    hat_on_fine = transfer(hat, fine)
    vals_h = hat_on_fine.eval(None, quad.bary)
    b2[0] = float(np.einsum("cq,cq,q,c->", vals_v, vals_h, quad.weights,
                            fine.mesh.areas()))
    assert np.allclose(b1, b2, rtol=1e-12)


def test_norm_constants(macro22):
    mesh = macro22.mesh
    c = 3.0
    f = lambda x, y: np.full_like(x, c)
    assert norm_lp(f, mesh, 2) == pytest.approx(c, rel=1e-13)
    assert norm_lp(f, mesh, 4) == pytest.approx(c, rel=1e-13)
    assert norm_lp(f, mesh, np.inf) == pytest.approx(c)


def test_norm_hat_equals_mass_diagonal(macro22):
    hat = FeFunction(macro22, np.ones(1))
    M11 = macro22.mass().to_dense()[0, 0]
    assert norm_lp(hat, macro22.mesh, 2) ** 2 == pytest.approx(M11, rel=1e-13)


def test_norm_sine_product():
    mesh = build_macro_mesh(UNIT, (64, 64))
    f = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    assert norm_lp(f, mesh, 2) == pytest.approx(0.5, rel=1e-6)


def test_galerkin_identity_random():
    mesh = uniform_refine(build_macro_mesh(UNIT, (4, 4)), 2)
    space = FeSpace(mesh)
    rng = np.random.default_rng(5)
    V = FeFunction(space, rng.standard_normal(space.ndof))
    X = FeFunction(space, rng.standard_normal(space.ndof))
    lhs = float(X.coeffs @ space.stiffness().matvec(V.coeffs))
    gV = cell_gradients(V)
    gX = cell_gradients(X)
    rhs = float(np.sum(np.sum(gV * gX, axis=1) * mesh.areas()))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_fprime_sup_closed_form():
    mesh = build_macro_mesh(UNIT, (2, 2))
    space = FeSpace(mesh)
    # zero function crosses zero: sup|F'| = 1
    assert fprime_sup(space.zero_function()) == pytest.approx(1.0)
    # peak value 2: element range [0, 2] crosses 0: sup = max(|3*4-1|, 1) = 11
    assert fprime_sup(FeFunction(space, np.array([2.0]))) == pytest.approx(11.0)


def test_fprime_sup_noncrossing_interval():
    # single cell values in [0.5, 0.6]: sup over v of |3v^2-1| at endpoints
    mesh = build_macro_mesh(UNIT, (1, 1))
    space = FeSpace(mesh)
    nodal = np.array([0.5, 0.55, 0.6, 0.5])
    per_cell = []
    for cell in mesh.tris:
        vals = nodal[cell]
        per_cell.append(max(abs(3 * vals.min() ** 2 - 1),
                            abs(3 * vals.max() ** 2 - 1)))
    f = NodalField(mesh, nodal)

    class FakeU:
        def __init__(self):
            self.mesh = mesh

        def nodal_values(self):
            return nodal

    assert fprime_sup(FakeU()) == pytest.approx(max(per_cell), rel=1e-13)


def test_backend_consistency():
    # both kernel backends agree on random element batches
    rng = np.random.default_rng(6)
    coords = rng.standard_normal((50, 3, 2))
    # enforce positive orientation
    v1 = coords[:, 1] - coords[:, 0]
    v2 = coords[:, 2] - coords[:, 0]
    flip = np.nonzero((v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]) < 0)[0]
    coords[flip] = coords[flip][:, [0, 2, 1]]
    coords = np.ascontiguousarray(coords)
    from acfem.kernels import (_py_p1_mass_local, _py_p1_stiffness_local,
                               _py_p1_weighted_mass_local, p1_mass_local,
                               p1_stiffness_local, p1_weighted_mass_local)
    assert np.allclose(p1_stiffness_local(coords),
                       _py_p1_stiffness_local(coords), rtol=1e-12, atol=1e-12)
    assert np.allclose(p1_mass_local(coords), _py_p1_mass_local(coords),
                       rtol=1e-12, atol=1e-14)
    quad = tri_rule(4)
    wq = np.ascontiguousarray(rng.standard_normal((50, quad.npoints)))
    assert np.allclose(
        p1_weighted_mass_local(coords, wq, np.ascontiguousarray(quad.bary),
                               np.ascontiguousarray(quad.weights)),
        _py_p1_weighted_mass_local(coords, wq, quad.bary, quad.weights),
        rtol=1e-12, atol=1e-14)
