"""Acceptance suite: one test per criterion, each printing a verdict line.

Criterion 6's effectivity band is a strict expected failure: with the
printed estimator formula and unit constants the Poisson-benchmark
effectivity sits flat near 21, outside [0.1, 10]; the analysis lives in the
decisions ledger.  Its rate clause passes and is asserted separately.
"""
import io
import time

import numpy as np
import pytest

from acfem.estimators import (ConstantsConfig, alpha_coeff, beta_coeff,
                              beta_tilde_coeff, compute_g_h,
                              condition_check, eta_d, final_bounds,
                              gamma_coeff, gamma_tilde_coeff,
                              l2_time_integral, power_integral)
from acfem.fem import (FeFunction, FeSpace, MappedField, load_vector,
                       norm_lp, phys_points, transfer)
from acfem.kernels import p1_mass_local, p1_stiffness_local
from acfem.linalg import cg_solve, smallest_eig_pencil
from acfem.mesh import (Rect, bisect, build_macro_mesh,
                        coarsest_common_refinement, finest_common_coarsening,
                        uniform_refine)
from acfem.quadrature import gauss_on_interval, tri_rule
from acfem.report import estimate_run, write_report_csv
from acfem.spectral import principal_eigenvalue
from acfem.stepper import (ModelParams, NewtonOptions, RandomNodal,
                           TimePolicy, gl_energy, initial_state,
                           run_simulation)

UNIT = Rect(0.0, 0.0, 1.0, 1.0)


def verdict(criterion, ok, detail):
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")


def test_criterion_1_assembly_oracles():
    t0 = time.time()
    coords = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    K = p1_stiffness_local(coords)[0]
    M = p1_mass_local(coords)[0]
    K_hand = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    M_hand = np.array([[2.0, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
    local_err = max(np.max(np.abs(K - K_hand)), np.max(np.abs(M - M_hand)))

    mesh = uniform_refine(build_macro_mesh(UNIT, (2, 2)), 1)
    space = FeSpace(mesh)
    from acfem.fem import assemble_mass, assemble_stiffness
    A = assemble_stiffness(space, dirichlet=False).to_dense()
    Mg = assemble_mass(space, dirichlet=False).to_dense()
    quad = tri_rule(2)
    nv = mesh.num_vertices
    A2 = np.zeros((nv, nv))
    M2 = np.zeros((nv, nv))
    areas = mesh.areas()
    coords_all = mesh.cell_coords()
    for c in range(mesh.num_cells):
        idx = mesh.tris[c]
        xy = coords_all[c]
        grads = []
        for i in range(3):
            j, k = [(1, 2), (2, 0), (0, 1)][i]
            d = xy[k] - xy[j]
            grads.append(np.array([-d[1], d[0]]) / (2 * areas[c]))
        for i in range(3):
            for j in range(3):
                A2[idx[i], idx[j]] += areas[c] * float(grads[i] @ grads[j])
                vi = np.eye(3)[i] @ quad.bary.T
                vj = np.eye(3)[j] @ quad.bary.T
                M2[idx[i], idx[j]] += areas[c] * float(
                    np.sum(quad.weights * vi * vj))
    global_err = max(np.max(np.abs(A - A2)), np.max(np.abs(Mg - M2)))
    elapsed = time.time() - t0
    ok = local_err < 1e-14 and global_err < 1e-12 and elapsed < 1.0
    verdict(1, ok, f"local err {local_err:.2e}, global err {global_err:.2e}, "
                   f"{elapsed:.2f}s")
    assert local_err < 1e-14
    assert global_err < 1e-12
    assert elapsed < 1.0


def test_criterion_2_galerkin_orthogonality():
    t0 = time.time()
    space = FeSpace(build_macro_mesh(UNIT, (8, 8)))
    f = lambda x, y, t: 0.3 * x * (1.0 - y)
    p = ModelParams(epsilon=0.4, T=0.06, u0=RandomNodal(delta=0.3, seed=11),
                    f=f, domain=UNIT)
    slabs = run_simulation(p, space, TimePolicy(k=0.02),
                           newton=NewtonOptions(tol=1e-13))
    assert len(slabs) >= 3
    fine_mesh = uniform_refine(space.mesh, 2)
    fine = FeSpace(fine_mesh)
    A_f = fine.stiffness()
    worst = 0.0
    for slab in slabs:
        g = compute_g_h(slab, p)
        gf = g.on_mesh(fine_mesh)
        omega = FeFunction(fine, cg_solve(A_f, load_vector(fine, gf),
                                          tol=1e-13))
        U = slab.cur
        diff = omega.coeffs - transfer(U, fine).coeffs
        normU = np.sqrt(float(U.coeffs @ space.stiffness().matvec(U.coeffs)))
        for j in range(space.ndof):
            X = np.zeros(space.ndof)
            X[j] = 1.0
            Xf = transfer(FeFunction(space, X), fine)
            val = abs(float(Xf.coeffs @ A_f.matvec(diff)))
            normX = np.sqrt(float(X @ space.stiffness().matvec(X)))
            worst = max(worst, val / (normU * normX))
    elapsed = time.time() - t0
    ok = worst <= 1e-8 and elapsed < 30
    verdict(2, ok, f"worst |(grad(w-U), grad X)|/(|U|_1 |X|_1) = {worst:.2e} "
                   f"over {len(slabs)} slabs, {elapsed:.1f}s")
    assert worst <= 1e-8
    assert elapsed < 30


def test_criterion_3_heat_limit_convergence():
    t0 = time.time()
    T = 0.25
    u_ex = lambda x, y, t: np.exp(-t) * np.sin(np.pi * x) * np.sin(np.pi * y)
    f = lambda x, y, t: (2.0 * np.pi ** 2 - 1.0) * u_ex(x, y, t)
    errs = []
    hs = []
    for n in (8, 16, 32, 64):
        space = FeSpace(build_macro_mesh(UNIT, (n, n)))
        steps = 4 * (n // 8) ** 2
        p = ModelParams(epsilon=1.0, T=T, u0=lambda x, y: u_ex(x, y, 0.0),
                        f=f, domain=UNIT, nonlinear=False)
        slabs = run_simulation(p, space, TimePolicy(k=T / steps))
        mesh = space.mesh
        worst = 0.0
        for s in slabs:
            U, t_cur = s.cur, s.t_cur

            class Diff:
                def __init__(self):
                    self.mesh = mesh

                def eval(self, cells, bary):
                    pts = phys_points(mesh, cells, bary)
                    return U.eval(cells, bary) - u_ex(pts[..., 0],
                                                      pts[..., 1], t_cur)

            worst = max(worst, norm_lp(Diff(), mesh, 2))
        errs.append(worst)
        hs.append(1.0 / n)
    design = np.vstack([np.log(hs), np.ones(len(hs))]).T
    slope = float(np.linalg.lstsq(design, np.log(errs), rcond=None)[0][0])
    elapsed = time.time() - t0
    ok = abs(slope - 2.0) <= 0.2 and elapsed < 60
    verdict(3, ok, f"Linf(L2) slope {slope:.3f} over 4 levels, {elapsed:.1f}s")
    assert abs(slope - 2.0) <= 0.2
    assert elapsed < 60


def test_criterion_4_energy_decay():
    t0 = time.time()
    eps = 0.1
    space = FeSpace(build_macro_mesh(UNIT, (32, 32)))
    prof = lambda x, y: np.tanh(
        (0.25 - np.sqrt((x - 0.5) ** 2 + (y - 0.5) ** 2)) / (np.sqrt(2) * eps))
    p = ModelParams(epsilon=eps, T=0.5, u0=prof, domain=UNIT)
    slabs = run_simulation(p, space, TimePolicy(k=eps ** 2 / 4))
    energies = [gl_energy(initial_state(p, space), eps)] + \
        [s.energy for s in slabs]
    upticks = [b / a - 1.0 for a, b in zip(energies, energies[1:]) if b > a]
    worst_uptick = max(upticks, default=0.0)
    nodal_max = max(s.nodal_max for s in slabs)
    elapsed = time.time() - t0
    ok = worst_uptick <= 1e-10 and elapsed < 60
    verdict(4, ok, f"{len(slabs)} steps, worst uptick {worst_uptick:.2e}, "
                   f"nodal max {nodal_max:.4f} (monitored), {elapsed:.1f}s")
    assert worst_uptick <= 1e-10
    assert elapsed < 60


def test_criterion_5_spectral_oracle():
    t0 = time.time()
    eps = 0.1
    space = FeSpace(build_macro_mesh(UNIT, (64, 64)))
    s = principal_eigenvalue(space.zero_function(), eps)
    expect = eps ** -2 - 2.0 * np.pi ** 2
    rel = abs(s.lambda_h - expect) / expect

    import scipy.linalg as sla
    small = FeSpace(build_macro_mesh(UNIT, (8, 8)))
    from acfem.fem import Fprime, assemble_weighted_mass
    Mw = assemble_weighted_mass(small, MappedField(small.zero_function(),
                                                   Fprime))
    S8 = small.stiffness().add_scaled(Mw, eps ** -2)
    res8 = smallest_eig_pencil(S8, small.mass())
    w = sla.eigh(S8.to_dense(), small.mass().to_dense(), eigvals_only=True)
    dense_rel = abs(res8.value - w[0]) / abs(w[0])
    elapsed = time.time() - t0
    ok = rel <= 0.02 and dense_rel <= 1e-6 and elapsed < 30
    verdict(5, ok, f"lambda_h {s.lambda_h:.4f} vs {expect:.4f} "
                   f"(rel {rel:.2e}); dense cross-check rel {dense_rel:.2e}; "
                   f"{elapsed:.1f}s")
    assert rel <= 0.02
    assert dense_rel <= 1e-6
    assert elapsed < 30


def test_criterion_6_rate():
    t0 = time.time()
    from acfem.cli import poisson_benchmark
    rows = poisson_benchmark(4)
    rates = [row["rate_l2"] for row in rows[1:]]
    elapsed = time.time() - t0
    ok = all(abs(r - 2.0) <= 0.2 for r in rates) and elapsed < 30
    verdict("6 (rate)", ok, f"L2 rates {[round(r, 3) for r in rates]}, "
                            f"{elapsed:.1f}s")
    assert all(abs(r - 2.0) <= 0.2 for r in rates)
    assert elapsed < 30


@pytest.mark.xfail(
    strict=True,
    reason="duality L2 estimator with unit constants has flat effectivity "
           "~21 on this benchmark; [0.1, 10] unattainable with the printed "
           "formula (decisions ledger)")
def test_criterion_6_effectivity_band():
    from acfem.cli import poisson_benchmark
    rows = poisson_benchmark(4)
    effs = [row["effectivity"] for row in rows]
    inside = all(0.1 <= e <= 10.0 for e in effs)
    verdict("6 (effectivity)", inside,
            f"effectivities {[round(e, 2) for e in effs]} vs band [0.1, 10]")
    assert inside


def test_criterion_7_zero_fixed_point():
    t0 = time.time()
    space = FeSpace(build_macro_mesh(UNIT, (8, 8)))
    p = ModelParams(epsilon=0.5, T=0.1, u0=lambda x, y: np.zeros_like(x),
                    domain=UNIT)
    U0 = initial_state(p, space)
    slabs = run_simulation(p, space, TimePolicy(k=0.05))
    rep = estimate_run(U0, slabs, p)
    buf1 = io.StringIO()
    write_report_csv(rep, buf1)
    rep2 = estimate_run(U0, run_simulation(p, space, TimePolicy(k=0.05)), p)
    buf2 = io.StringIO()
    write_report_csv(rep2, buf2)
    stable = buf1.getvalue() == buf2.getvalue()
    elapsed = time.time() - t0
    ok = (rep.eta == 0.0 and rep.bound_l4l4 == 0.0 and rep.bound_l2h1 == 0.0
          and rep.bound_linfl2 == 0.0 and rep.condition_satisfied and stable
          and elapsed < 5)
    verdict(7, ok, f"eta {rep.eta}, bounds ({rep.bound_l4l4}, "
                   f"{rep.bound_l2h1}, {rep.bound_linfl2}), condition "
                   f"{rep.condition_satisfied}, byte-stable {stable}, "
                   f"{elapsed:.1f}s")
    assert rep.eta == 0.0
    assert rep.bound_l4l4 == 0.0 and rep.bound_l2h1 == 0.0 \
        and rep.bound_linfl2 == 0.0
    assert rep.condition_satisfied
    assert stable
    assert elapsed < 5


def test_criterion_8_formula_plugin_audit():
    t0 = time.time()
    from tests.test_estimators import AUDIT_SETS
    worst = 0.0
    for (theta, u, fp, eps, c_pf, c_gnl), c_expect, abg_expect in AUDIT_SETS:
        cc = ConstantsConfig(c_pf=c_pf, c_gnl=c_gnl)
        got = [cc.C0, cc.C1, cc.C2, cc.C0t, cc.C1t, cc.C2t,
               alpha_coeff(fp, u), beta_coeff(theta, u, fp, eps, cc),
               gamma_coeff(theta, u, fp, cc),
               beta_tilde_coeff(theta, u, fp, eps, cc),
               gamma_tilde_coeff(theta, u, cc)]
        expect = list(c_expect) + list(abg_expect)
        for g, e in zip(got, expect):
            err = abs(g - e) / max(1.0, abs(e))
            worst = max(worst, err)
    # eta aggregation, condition, final bounds on frozen fixtures
    assert eta_d((1.0, 4.0), [11.0]) == pytest.approx(2.0, rel=1e-12)
    _, rhs, ok_c = condition_check(2.0, 1.0 / 16.0, 1.0, 0.0, 1.0, d=2)
    worst = max(worst, abs(rhs - 1.0))
    assert not ok_c
    b4, bh1, binf = final_bounds(0.3, 1.7, 0.2, 2, 0.01, 0.02, 0.03)
    worst = max(worst, abs(b4 - 0.6951150072612559) / 0.6951150072612559)
    worst = max(worst, abs(bh1 - 1.6795180023127196) / 1.6795180023127196)
    worst = max(worst, abs(binf - 0.36190360046254394) / 0.36190360046254394)
    elapsed = time.time() - t0
    ok = worst <= 1e-12 and elapsed < 1
    verdict(8, ok, f"worst relative defect {worst:.2e} over "
                   f"{len(AUDIT_SETS)} fixture sets, {elapsed:.2f}s")
    assert worst <= 1e-12
    assert elapsed < 1


def test_criterion_9_quadrature_consistency():
    t0 = time.time()
    space = FeSpace(build_macro_mesh(UNIT, (8, 8)))
    p = ModelParams(epsilon=0.4, T=0.06, u0=RandomNodal(delta=0.4, seed=3),
                    domain=UNIT)
    slabs = run_simulation(p, space, TimePolicy(k=0.02),
                           newton=NewtonOptions(tol=1e-12))
    worst = 0.0
    for slab in slabs:
        v4 = l2_time_integral(slab, p, n_gauss=4)
        v8 = l2_time_integral(slab, p, n_gauss=8)
        if v8 > 0:
            worst = max(worst, abs(v4 - v8) / v8)
    # closed-form affine power integrals against doubled-order Gauss
    rng = np.random.default_rng(1)
    for q in (2, 4, 6):
        for _ in range(20):
            a, b = rng.uniform(0.0, 2.0, size=2)
            k = rng.uniform(0.05, 1.0)
            exact = power_integral(a, b, q, k)
            tq, wq = gauss_on_interval(0.0, k, 8)
            num = float(np.sum(wq * (a * (1 - tq / k) + b * (tq / k)) ** q))
            if num > 0:
                worst = max(worst, abs(exact - num) / num)
    elapsed = time.time() - t0
    ok = worst <= 1e-10 and elapsed < 10
    verdict(9, ok, f"worst relative quadrature defect {worst:.2e}, "
                   f"{elapsed:.1f}s")
    assert worst <= 1e-10
    assert elapsed < 10


def test_criterion_10_mesh_algebra():
    t0 = time.time()
    rng = np.random.default_rng(99)
    base = build_macro_mesh(UNIT, (2, 2))

    def random_refine(m):
        for _ in range(int(rng.integers(0, 4))):
            nc = m.num_cells
            m = bisect(m, rng.choice(nc, size=int(rng.integers(1, nc + 1)),
                                     replace=False))
        return m

    checked = 0
    for _ in range(100):
        a = random_refine(base)
        b = random_refine(base)
        meet = finest_common_coarsening(a, b)
        join = coarsest_common_refinement(a, b)
        assert a.is_refinement_of(meet) and b.is_refinement_of(meet)
        assert join.is_refinement_of(a) and join.is_refinement_of(b)
        assert finest_common_coarsening(a, a).cell_id_set() == a.cell_id_set()
        assert coarsest_common_refinement(a, a).cell_id_set() == a.cell_id_set()
        assert finest_common_coarsening(a, join).cell_id_set() == a.cell_id_set()
        assert coarsest_common_refinement(a, meet).cell_id_set() == a.cell_id_set()
        assert meet.cell_id_set() == finest_common_coarsening(b, a).cell_id_set()
        assert join.cell_id_set() == coarsest_common_refinement(b, a).cell_id_set()
        checked += 1
    elapsed = time.time() - t0
    ok = checked == 100 and elapsed < 10
    verdict(10, ok, f"{checked} randomized pairs, all laws exact, "
                    f"{elapsed:.1f}s")
    assert checked == 100
    assert elapsed < 10


def test_criterion_11_condition_epsilon_scaling():
    t0 = time.time()
    worst = 0.0
    for d, expo in ((2, 1.5), (3, 2.5)):
        _, r1, _ = condition_check(0.1, 3.0, 2.0, 1.0, 0.1, d=d)
        _, r2, _ = condition_check(0.1, 3.0, 2.0, 1.0, 0.2, d=d)
        worst = max(worst, abs(r2 / r1 - 2.0 ** expo) / 2.0 ** expo)
    elapsed = time.time() - t0
    ok = worst <= 1e-12 and elapsed < 1
    verdict(11, ok, f"rhs scaling exponents (3/2, 5/2 per the eps^6/eps^10 "
                    f"conditions), worst defect {worst:.2e}, {elapsed:.2f}s")
    assert worst <= 1e-12
    assert elapsed < 1
