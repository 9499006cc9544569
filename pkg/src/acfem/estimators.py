"""Computable error-estimator machinery for the backward Euler scheme.

Everything here reduces to integrals of the residual field

    g^n = (U^{n-1} - U^n)/k_n - F(U^n)/eps^2 + f(t_n)        (n >= 1)
    g^0 = -lap_h U^0 - (I - P0) F(U^0)/eps^2 + (I - P0) f(0)

over the recorded meshes: duality-based spatial estimators E(.; L_p) and
E(.; L_inf) bounding the elliptic defect theta^n, a mesh-change estimator
bounding theta_t on each slab, the slab terms L1, L2, Theta_1, Theta_2,
the stability coefficients alpha/beta/gamma (and their d = 3 tilde
variants), and the aggregation into eta_d, the exponential factor E_d,
the smallness condition and the final error bounds.
"""
from dataclasses import dataclass

import numpy as np

from acfem.fem import (FeFunction, F, MappedField, as_field,
                       discrete_laplacian, fprime_sup, l2_project, norm_lp,
                       phys_points)
from acfem.mesh import coarsest_common_refinement
from acfem.quadrature import gauss_on_interval, tri_rule


# -- constants -----------------------------------------------------------------


@dataclass
class ConstantsConfig:
    """Primitive inequality constants; derived ones are always recomputed.

    c_pf: Poincare-Friedrichs, defaults to diam(domain)/pi on convex domains.
    c_gnl: Gagliardo-Nirenberg-Ladyzhenskaya interpolation constant.
    c_sz: Scott-Zhang interpolation stability constant.
    c_omega: H^2 elliptic-regularity constant of the convex domain.
    spectral_safety: inflation applied to the discrete eigenvalue; the
        resulting bounds are heuristic-spectral, not certified.
    """

    c_pf: float = 1.0
    c_gnl: float = 1.0
    c_sz: float = 1.0
    c_omega: float = 1.0
    spectral_safety: float = 0.05

    @classmethod
    def for_domain(cls, domain, **overrides):
        values = {"c_pf": domain.diameter / np.pi}
        values.update(overrides)
        return cls(**values)

    # derived constants of the d = 2 energy bounds
    @property
    def C0(self):
        return (self.c_pf * self.c_gnl ** 2 + 1.0) / 2.0

    @property
    def C1(self):
        return (9.0 + 9.0 * self.c_pf * self.c_gnl ** 2
                + 6.0 ** 4 * 11.0 ** 2 * self.c_pf ** 2 * self.c_gnl ** 4)

    @property
    def C2(self):
        return 2.0 * 3.0 ** 7 * self.c_pf ** 2 * self.c_gnl ** 4

    # tilde variants (d = 3)
    @property
    def C0t(self):
        return (np.sqrt(self.c_pf) * self.c_gnl ** 2 + 1.0) / 2.0

    @property
    def C1t(self):
        return (9.0 + 9.0 * np.sqrt(self.c_pf) * self.c_gnl ** 2
                + 6.0 ** 4 * 11.0 ** 2 * self.c_pf * self.c_gnl ** 4)

    @property
    def C2t(self):
        return 3.0 ** 7 * self.c_pf * self.c_gnl ** 4

    def as_dict(self):
        return {"C_PF": self.c_pf, "c_tilde": self.c_gnl, "C_SZ": self.c_sz,
                "C_Omega": self.c_omega, "spectral_safety": self.spectral_safety}


# -- residual fields -----------------------------------------------------------


class ResidualField:
    """The elliptic-reconstruction load g, evaluable cellwise on its mesh.

    value = P1 part + cF * F(P1 state) + f(x, y, t); both P1 ingredients are
    stored as full nodal arrays, so the field transfers exactly to any
    refinement of its mesh.
    """

    def __init__(self, mesh, lin_nodal, u_nodal=None, cF=0.0, f=None, t=0.0):
        self.mesh = mesh
        self.lin_nodal = np.asarray(lin_nodal, dtype=np.float64)
        self.u_nodal = None if u_nodal is None else np.asarray(u_nodal, dtype=np.float64)
        self.cF = float(cF)
        self.f = f
        self.t = float(t)

    def eval(self, cells, bary):
        tris = self.mesh.tris if cells is None else self.mesh.tris[cells]
        bary = np.asarray(bary)
        vals = self.lin_nodal[tris] @ bary.T
        if self.u_nodal is not None and self.cF != 0.0:
            vals = vals + self.cF * F(self.u_nodal[tris] @ bary.T)
        if self.f is not None:
            pts = phys_points(self.mesh, cells, bary)
            vals = vals + self.f(pts[..., 0], pts[..., 1], self.t)
        return vals

    def on_mesh(self, finer):
        """The same field represented on a refinement of its mesh."""
        if finer is self.mesh:
            return self
        from acfem.fem import _interp_nodal
        lin = _interp_nodal(self.mesh, self.lin_nodal, finer)
        u = (None if self.u_nodal is None
             else _interp_nodal(self.mesh, self.u_nodal, finer))
        return ResidualField(finer, lin, u, self.cF, self.f, self.t)


class DiffField:
    """(a - b) / scale for two fields on the same mesh."""

    def __init__(self, a, b, scale=1.0):
        if a.mesh is not b.mesh:
            raise ValueError("fields live on different meshes")
        self.mesh = a.mesh
        self.a = a
        self.b = b
        self.scale = scale

    def eval(self, cells, bary):
        return (self.a.eval(cells, bary) - self.b.eval(cells, bary)) / self.scale


def compute_g_h(slab, params):
    """g^n of a completed slab, on the join of its two meshes (n >= 1)."""
    mesh_prev = slab.prev.mesh
    mesh_cur = slab.cur.mesh
    join = mesh_cur if mesh_prev is mesh_cur else \
        coarsest_common_refinement(mesh_prev, mesh_cur)
    from acfem.fem import _interp_nodal
    prev_nodal = (slab.prev.nodal_values() if join is mesh_prev else
                  _interp_nodal(mesh_prev, slab.prev.nodal_values(), join))
    cur_nodal = (slab.cur.nodal_values() if join is mesh_cur else
                 _interp_nodal(mesh_cur, slab.cur.nodal_values(), join))
    lin = (prev_nodal - cur_nodal) / slab.k
    eps2_inv = params.epsilon ** -2
    return ResidualField(join, lin, u_nodal=cur_nodal, cF=-eps2_inv,
                         f=params.f, t=slab.t_cur)


def compute_g0(U0, params):
    """g^0 in its projection form (convention U^{-1} = U^0)."""
    space = U0.space
    eps2_inv = params.epsilon ** -2
    lap = discrete_laplacian(space, U0)
    pF = l2_project(space, MappedField(U0, F), quad=tri_rule(4))
    lin = -lap.nodal_values() + eps2_inv * pF.nodal_values()
    if params.f is not None:
        pf = l2_project(space, params.forcing(0.0))
        lin = lin - pf.nodal_values()
    return ResidualField(space.mesh, lin, u_nodal=U0.nodal_values(),
                         cF=-eps2_inv, f=params.f, t=0.0)


# -- elementwise integrals and jumps -------------------------------------------


def cell_p_integrals(g, coarse_mesh, p, quad=None):
    """integral over each coarse cell of |g|^p; g may live on a refinement."""
    if quad is None:
        quad = tri_rule(10)
    eval_mesh = g.mesh
    vals = np.abs(g.eval(None, quad.bary)) ** p
    per_cell = (vals @ quad.weights) * eval_mesh.areas()
    if eval_mesh is coarse_mesh:
        return per_cell
    owner = coarse_mesh.containing_cells(eval_mesh)
    out = np.zeros(coarse_mesh.num_cells)
    np.add.at(out, owner, per_cell)
    return out


def cell_sup(g, coarse_mesh, quad=None):
    """sup of |g| per coarse cell, over quadrature points and corners."""
    if quad is None:
        quad = tri_rule(10)
    eval_mesh = g.mesh
    bary = np.vstack([quad.bary, np.eye(3)])
    vals = np.abs(g.eval(None, bary)).max(axis=1)
    if eval_mesh is coarse_mesh:
        return vals
    owner = coarse_mesh.containing_cells(eval_mesh)
    out = np.zeros(coarse_mesh.num_cells)
    np.maximum.at(out, owner, vals)
    return out


def gradient_jumps(mesh, nodal):
    """Normal-derivative jumps of a P1 function across interior edges.

    Returns (interior edge indices, |jump| scalars, edge lengths, adjacent
    cell pairs).  The tangential derivative is continuous, so |jump of the
    gradient vector| = |jump of the normal derivative|.
    """
    grads = _nodal_gradients(mesh, nodal)
    interior = np.nonzero(~mesh.edge_boundary)[0]
    e = mesh.edges[interior]
    cells = mesh.edge_cells[interior]
    tang = mesh.points[e[:, 1]] - mesh.points[e[:, 0]]
    lengths = np.sqrt(np.sum(tang * tang, axis=1))
    normal = np.stack([tang[:, 1], -tang[:, 0]], axis=-1) / lengths[:, None]
    jump = np.einsum("ed,ed->e", grads[cells[:, 0]] - grads[cells[:, 1]], normal)
    return interior, np.abs(jump), lengths, cells


def _nodal_gradients(mesh, nodal):
    coords = mesh.cell_coords()
    vals = np.asarray(nodal)[mesh.tris]
    d = coords[:, [2, 0, 1], :] - coords[:, [1, 2, 0], :]
    b = np.stack([-d[:, :, 1], d[:, :, 0]], axis=-1)
    areas2 = 2.0 * mesh.areas()
    return np.einsum("ci,cid->cd", vals, b) / areas2[:, None]


def _edge_h(mesh, cells_pair):
    h = mesh.diameters()
    return np.maximum(h[cells_pair[:, 0]], h[cells_pair[:, 1]])


# -- spatial estimators ---------------------------------------------------------


def spatial_estimator(U, g, p, constants, quad=None):
    """Duality L_p estimator for the elliptic defect at one time level.

    E = C_Omega*C_SZ*(sum_tau ||h^2 r||_p^p + sum_edges ||h^{1+1/p} [grad U]||_p^p)^{1/p}
    with r = g for P1 elements.  Returns (E, per-element indicators) with
    sum(indicators) = E^p (edge terms split evenly between neighbours).
    """
    if p not in (2, 4, 6):
        raise ValueError("p must be 2, 4 or 6")
    mesh = U.mesh
    h = mesh.diameters()
    elem = cell_p_integrals(g, mesh, p, quad=quad) * h ** (2 * p)
    _, jumps, lengths, cells_pair = gradient_jumps(mesh, U.nodal_values())
    h_e = _edge_h(mesh, cells_pair)
    edge_term = h_e ** (p + 1) * jumps ** p * lengths
    scale = (constants.c_omega * constants.c_sz) ** p
    indicators = elem.copy()
    np.add.at(indicators, cells_pair[:, 0], 0.5 * edge_term)
    np.add.at(indicators, cells_pair[:, 1], 0.5 * edge_term)
    indicators *= scale
    total = float(indicators.sum())
    return total ** (1.0 / p), indicators


def log_factor(h_max, d=2):
    """(ln(1/h))^alpha_d with h clamped to <= 1/2; alpha_2 = 2, alpha_3 = 1."""
    h = min(h_max, 0.5)
    alpha = 2 if d == 2 else 1
    return float(np.log(1.0 / h) ** alpha)


def spatial_estimator_inf(U, g, constants, quad=None, d=2):
    """Pointwise estimator: C * lf * (sum_tau ||h^2 r||_inf + sum_e ||h [grad U]||_inf)."""
    mesh = U.mesh
    h = mesh.diameters()
    elem = float(np.sum(cell_sup(g, mesh, quad=quad) * h ** 2))
    _, jumps, _, cells_pair = gradient_jumps(mesh, U.nodal_values())
    h_e = _edge_h(mesh, cells_pair)
    edge = float(np.sum(h_e * jumps))
    lf = log_factor(float(h.max()) if h.size else 0.5, d=d)
    return constants.c_omega * constants.c_sz * lf * (elem + edge)


def spatial_estimator_h1(U, g, constants, quad=None):
    """Energy-norm residual estimator (weights h and h^{1/2}), for the
    L2(H1) theta term; standard form, constant C_SZ."""
    mesh = U.mesh
    h = mesh.diameters()
    elem = cell_p_integrals(g, mesh, 2, quad=quad) * h ** 2
    _, jumps, lengths, cells_pair = gradient_jumps(mesh, U.nodal_values())
    h_e = _edge_h(mesh, cells_pair)
    edge = h_e * jumps ** 2 * lengths
    return constants.c_sz * float(np.sqrt(elem.sum() + edge.sum()))


def mesh_change_estimator(g_cur, g_prev, U_cur, U_prev, k, p, constants,
                          quad=None):
    """Backward-difference estimator bounding ||theta_t||_p on a slab.

    Element terms integrate |(g^n - g^{n-1})/k|^p over the coarsest common
    refinement of the slab meshes with weights hhat = max(h_n, h_{n-1});
    edge terms take the difference of the gradient jumps on the union
    skeleton (realized on the common evaluation mesh, where jumps interior
    to either mesh's cells vanish for that mesh's state).
    """
    if p not in (2, 4):
        raise ValueError("p must be 2 or 4")
    mesh_n = U_cur.mesh
    mesh_p = U_prev.mesh
    slab_join = mesh_n if mesh_n is mesh_p else \
        coarsest_common_refinement(mesh_n, mesh_p)
    # evaluation mesh: fine enough for both residual fields
    eval_mesh = slab_join
    for gm in (g_cur.mesh, g_prev.mesh):
        if gm is not eval_mesh:
            eval_mesh = coarsest_common_refinement(eval_mesh, gm)
    dr = DiffField(g_cur.on_mesh(eval_mesh), g_prev.on_mesh(eval_mesh), scale=k)

    # hhat per slab-join cell = max of the containing cells' diameters
    own_n = mesh_n.containing_cells(slab_join) if slab_join is not mesh_n \
        else np.arange(slab_join.num_cells)
    own_p = mesh_p.containing_cells(slab_join) if slab_join is not mesh_p \
        else np.arange(slab_join.num_cells)
    hhat = np.maximum(mesh_n.diameters()[own_n], mesh_p.diameters()[own_p])

    elem = cell_p_integrals(dr, slab_join, p, quad=quad) * hhat ** (2 * p)

    from acfem.fem import _interp_nodal

    def nodal_on_eval(U):
        if U.mesh is eval_mesh:
            return U.nodal_values()
        return _interp_nodal(U.mesh, U.nodal_values(), eval_mesh)

    _, j_cur, lengths, cells_pair = gradient_jumps(eval_mesh, nodal_on_eval(U_cur))
    _, j_prev, _, _ = gradient_jumps(eval_mesh, nodal_on_eval(U_prev))
    djump = np.abs(j_cur - j_prev) / k
    if eval_mesh is slab_join:
        own_join = np.arange(eval_mesh.num_cells)
    else:
        own_join = slab_join.containing_cells(eval_mesh)
    hhat_cells = hhat[own_join]
    h_e = np.maximum(hhat_cells[cells_pair[:, 0]], hhat_cells[cells_pair[:, 1]])
    edge = h_e ** (p + 1) * djump ** p * lengths
    total = float(elem.sum() + edge.sum())
    return constants.c_omega * constants.c_sz * total ** (1.0 / p)


def theta_norm_bound(e_prev, e_cur):
    """Affine-in-time bound ||theta(t)||_p <= a*l_{n-1}(t) + b*l_n(t)."""
    return float(e_prev), float(e_cur)


def power_integral(a, b, q, k):
    """Exact integral over a slab of (a*l_{n-1}(t) + b*l_n(t))^q."""
    i = np.arange(q + 1)
    return k * float(np.sum(a ** i * b ** (q - i))) / (q + 1)


# -- printed algebraic formulas --------------------------------------------------


def alpha_coeff(fp_inf, u_inf):
    return fp_inf ** 2 + u_inf ** 2 + 7.0


def beta_coeff(theta_inf, u_inf, fp_inf, eps, constants):
    c = constants
    return (c.C2 * eps ** 4 / 16.0 * (theta_inf ** 4 + u_inf ** 4)
            + 2.0 * eps ** 2 * u_inf ** 4
            + 2.0 * c.c_pf ** 2 * c.c_gnl ** 4 * fp_inf ** 2
            + 11.0 * eps ** 6 * (fp_inf ** 4 + u_inf ** 4 + 6.0))


def gamma_coeff(theta_inf, u_inf, fp_inf, constants):
    c = constants
    return 2.0 * c.c_gnl ** 4 * (c.c_pf ** 2 * fp_inf ** 2
                                 + 36.0 * (theta_inf ** 2 + u_inf ** 2))


def beta_tilde_coeff(theta_inf, u_inf, fp_inf, eps, constants):
    c = constants
    return (c.C2t * eps ** 8 / 16.0 * (theta_inf ** 4 + u_inf ** 4)
            + 2.0 * eps ** 6 * u_inf ** 4
            + 2.0 * c.c_pf * c.c_gnl ** 4 * eps ** 2 * fp_inf ** 4
            + 11.0 * eps ** 10 * (fp_inf ** 4 + u_inf ** 4 + 6.0))


def gamma_tilde_coeff(theta_inf, u_inf, constants):
    c = constants
    return 324.0 * c.c_pf * c.c_gnl ** 4 * (theta_inf ** 4 + u_inf ** 4)


def stability_coefficients(theta_inf, u_inf, fp_inf, eps, constants, d=2):
    """(alpha, beta, gamma) evaluated verbatim from the printed formulas."""
    alpha = alpha_coeff(fp_inf, u_inf)
    if d == 2:
        return (alpha,
                beta_coeff(theta_inf, u_inf, fp_inf, eps, constants),
                gamma_coeff(theta_inf, u_inf, fp_inf, constants))
    if d == 3:
        return (alpha,
                beta_tilde_coeff(theta_inf, u_inf, fp_inf, eps, constants),
                gamma_tilde_coeff(theta_inf, u_inf, constants))
    raise ValueError("d must be 2 or 3")


# -- per-level and per-slab estimation -------------------------------------------


@dataclass
class LevelEstimates:
    """Everything attached to one time level t_j."""

    t: float
    U: FeFunction
    g: ResidualField
    E_p: dict                 # p in {2, 4, 6} -> estimator value
    E_inf: float
    E_h1: float
    indicators: np.ndarray    # p = 2 per-element contributions
    u_inf: float
    fp_inf: float
    newton_res: float = 0.0
    lambda_h: float = np.nan
    Lambda_h: float = np.nan
    eigen_residual: float = np.nan


def level_estimates(t, U, g, constants, newton_res=0.0, quad=None):
    E_p = {}
    indicators = None
    for p in (2, 4, 6):
        val, ind = spatial_estimator(U, g, p, constants, quad=quad)
        E_p[p] = val
        if p == 2:
            indicators = ind
    return LevelEstimates(
        t=t, U=U, g=g, E_p=E_p,
        E_inf=spatial_estimator_inf(U, g, constants, quad=quad),
        E_h1=spatial_estimator_h1(U, g, constants, quad=quad),
        indicators=indicators,
        u_inf=U.max_abs(),
        fp_inf=fprime_sup(U),
        newton_res=newton_res,
    )


@dataclass
class SlabEstimates:
    """All per-slab estimator integrals for one interval J_n."""

    n: int
    t_prev: float
    t_cur: float
    k: float
    L1: float
    int_L2: float
    int_Theta1: float
    int_Theta2: float
    E_prev: dict
    E_cur: dict
    E_inf_prev: float
    E_inf_cur: float
    E_h1_prev: float
    E_h1_cur: float
    mesh_change: dict            # p in {2, 4} -> Ehat
    indicators: np.ndarray       # current-level p=2 indicators
    alpha_sup: float
    beta_sup: float
    gamma_sup: float
    B_slab: float                # max{16 beta, gamma} over the slab
    D_contrib: float             # k_n * sup_t D_d(t)
    eta4_contrib: float
    lambda_h: float = np.nan
    Lambda_h: float = np.nan
    newton_res: float = 0.0


def _join_fields_for_L1(slab, prev_prev, params):
    """Evaluation mesh and nodal data for the three L1 norms."""
    meshes = [slab.prev.mesh, slab.cur.mesh]
    if prev_prev is not None:
        meshes.append(prev_prev.mesh)
    eval_mesh = meshes[0]
    for m in meshes[1:]:
        if m is not eval_mesh:
            eval_mesh = coarsest_common_refinement(eval_mesh, m)
    from acfem.fem import _interp_nodal

    def up(Ufun):
        if Ufun.mesh is eval_mesh:
            return Ufun.nodal_values()
        return _interp_nodal(Ufun.mesh, Ufun.nodal_values(), eval_mesh)

    return eval_mesh, up


def l1_term(slab, params, prev_prev=None, k_prev=None, quad=None):
    """The slab-constant term L1 (time error + data approximation).

    L1 = ||dU^n - dU^{n-1}||^2 + ||F(U^n) - F(U^{n-1})||^2/eps^4
         + ||f^n - f^{n-1}||^2
    with dU^n the backward difference; for n = 1 the previous difference
    vanishes (convention U^{-1} = U^0).
    """
    if quad is None:
        quad = tri_rule(10)
    eps4_inv = params.epsilon ** -4
    k = slab.k
    eval_mesh, up = _join_fields_for_L1(slab, prev_prev, params)
    u_cur = up(slab.cur)
    u_prev = up(slab.prev)
    d_cur = (u_cur - u_prev) / k
    if prev_prev is None:
        d_prev = np.zeros_like(d_cur)
    else:
        d_prev = (u_prev - up(prev_prev)) / k_prev
    areas = eval_mesh.areas()
    w = quad.weights
    tris = eval_mesh.tris

    def l2sq(nodal):
        vals = nodal[tris] @ quad.bary.T
        return float(np.einsum("cq,q,c->", vals * vals, w, areas))

    term_dd = l2sq(d_cur - d_prev)
    fcur = F(u_cur[tris] @ quad.bary.T)
    fprev = F(u_prev[tris] @ quad.bary.T)
    term_F = float(np.einsum("cq,q,c->", (fcur - fprev) ** 2, w, areas))
    if params.f is not None:
        pts = phys_points(eval_mesh, None, quad.bary)
        df = (params.f(pts[..., 0], pts[..., 1], slab.t_cur)
              - params.f(pts[..., 0], pts[..., 1], slab.t_prev))
        term_f = float(np.einsum("cq,q,c->", df * df, w, areas))
    else:
        term_f = 0.0
    return term_dd + eps4_inv * term_F + term_f


def l2_time_integral(slab, params, n_gauss=4, quad=None):
    """Gauss quadrature of L2(t) = ||f^n - f||^2 + ||F(U_h) - F(U^n)||^2/eps^4."""
    if quad is None:
        quad = tri_rule(10)
    eps4_inv = params.epsilon ** -4
    k = slab.k
    eval_mesh, up = _join_fields_for_L1(slab, None, params)
    u_cur = up(slab.cur)
    u_prev = up(slab.prev)
    areas = eval_mesh.areas()
    w = quad.weights
    tris = eval_mesh.tris
    fcur = F(u_cur[tris] @ quad.bary.T)
    tg, wg = gauss_on_interval(slab.t_prev, slab.t_cur, n_gauss)
    int_L2 = 0.0
    if params.f is not None:
        pts = phys_points(eval_mesh, None, quad.bary)
        f_end = params.f(pts[..., 0], pts[..., 1], slab.t_cur)
    for tq, wq in zip(tg, wg):
        ell = (tq - slab.t_prev) / k
        u_t = (1.0 - ell) * u_prev + ell * u_cur
        fdiff = F(u_t[tris] @ quad.bary.T) - fcur
        val = eps4_inv * float(np.einsum("cq,q,c->", fdiff * fdiff, w, areas))
        if params.f is not None:
            df = f_end - params.f(pts[..., 0], pts[..., 1], tq)
            val += float(np.einsum("cq,q,c->", df * df, w, areas))
        int_L2 += wq * val
    return float(int_L2)


def slab_terms(slab, lev_prev, lev_cur, params, constants, d=2,
               prev_prev=None, k_prev=None, Lambda_prev=np.nan,
               Lambda_cur=np.nan, n_gauss=4, quad=None):
    """Assemble the complete SlabEstimates record for one slab.

    ``prev_prev`` is U^{n-2} (None for n = 1: the convention U^{-1} = U^0
    makes the previous backward difference vanish).
    """
    if quad is None:
        quad = tri_rule(10)
    eps = params.epsilon
    eps4_inv = eps ** -4
    k = slab.k

    L1 = l1_term(slab, params, prev_prev=prev_prev, k_prev=k_prev, quad=quad)
    int_L2 = l2_time_integral(slab, params, n_gauss=n_gauss, quad=quad)

    # --- Theta_1 from the mesh-change estimator (constant-in-t bound)
    mc = {p: mesh_change_estimator(lev_cur.g, lev_prev.g, slab.cur, slab.prev,
                                   k, p, constants, quad=quad)
          for p in (2, 4)}
    int_Theta1 = k * (0.5 * mc[2] ** 2
                      + 2.75 * constants.c_pf ** 4 * mc[4] ** 4)

    # --- Theta_2 from affine theta bounds, powers integrated exactly
    u_inf_slab = max(lev_prev.u_inf, lev_cur.u_inf)
    if d == 2:
        c0, c1 = constants.C0, constants.C1
    else:
        c0, c1 = constants.C0t, constants.C1t
    i2 = power_integral(lev_prev.E_p[2], lev_cur.E_p[2], 2, k)
    i4 = power_integral(lev_prev.E_p[4], lev_cur.E_p[4], 4, k)
    i6 = power_integral(lev_prev.E_p[6], lev_cur.E_p[6], 6, k)
    int_Theta2 = eps4_inv * ((c0 + 396.0 * u_inf_slab ** 2) * i2
                             + 0.5 * c1 * i4 + c0 * i6)

    # --- stability coefficients: evaluate at both endpoints, take the sup
    abg = [stability_coefficients(lev.E_inf, lev.u_inf, lev.fp_inf, eps,
                                  constants, d=d)
           for lev in (lev_prev, lev_cur)]
    alpha_sup = max(a for a, _, _ in abg)
    beta_sup = max(b for _, b, _ in abg)
    gamma_sup = max(g for _, _, g in abg)
    B_slab = max(16.0 * beta_sup, gamma_sup)

    # --- Groenwall density D_d = max{4, alpha + 2 Lambda (1 - eps^2) + d}
    dvals = []
    for (a, _, _), Lam in zip(abg, (Lambda_prev, Lambda_cur)):
        if np.isnan(Lam):
            Lam = 0.0
        dvals.append(a + 2.0 * Lam * (1.0 - eps ** 2) + d)
    D_sup = max(4.0, max(dvals))
    D_contrib = k * D_sup

    eta4_contrib = int_Theta1 + int_Theta2 + c0 * (k * L1 + int_L2)

    return SlabEstimates(
        n=slab.n, t_prev=slab.t_prev, t_cur=slab.t_cur, k=k,
        L1=L1, int_L2=int_L2, int_Theta1=int_Theta1, int_Theta2=int_Theta2,
        E_prev=dict(lev_prev.E_p), E_cur=dict(lev_cur.E_p),
        E_inf_prev=lev_prev.E_inf, E_inf_cur=lev_cur.E_inf,
        E_h1_prev=lev_prev.E_h1, E_h1_cur=lev_cur.E_h1,
        mesh_change=mc, indicators=lev_cur.indicators,
        alpha_sup=alpha_sup, beta_sup=beta_sup, gamma_sup=gamma_sup,
        B_slab=B_slab, D_contrib=D_contrib, eta4_contrib=eta4_contrib,
        lambda_h=lev_cur.lambda_h, Lambda_h=lev_cur.Lambda_h,
        newton_res=slab.newton_residual,
    )


# -- aggregation -----------------------------------------------------------------


def initial_condition_terms(u0, U0, theta0_l2, theta0_l4, constants, quad=None):
    """Computable majorants of the two rho(0) terms in eta_d.

    Returns (t1, t2) with
      t1 >= ||rho(0)||^2/2        via ||u0 - U0||^2 + theta0_l2^2
      t2 >= C_PF^2 ||rho(0)||_4^4/2  via 4 C_PF^2 (||u0-U0||_4^4 + theta0_l4^4).
    """
    if u0 is None:
        diff2 = diff4 = 0.0
    else:
        mesh = U0.mesh
        U0f = as_field(U0, mesh)

        class _Diff:
            def __init__(self):
                self.mesh = mesh

            def eval(self, cells, bary):
                pts = phys_points(mesh, cells, bary)
                return u0(pts[..., 0], pts[..., 1]) - U0f.eval(cells, bary)

        diff = _Diff()
        diff2 = norm_lp(diff, mesh, 2, quad=quad) ** 2
        diff4 = norm_lp(diff, mesh, 4, quad=quad) ** 4
    t1 = diff2 + theta0_l2 ** 2
    t2 = 4.0 * constants.c_pf ** 2 * (diff4 + theta0_l4 ** 4)
    return t1, t2


def eta_d(initial_terms, slab_contribs):
    """eta_d = (initial terms + sum of slab contributions)^{1/4}."""
    total = float(initial_terms[0] + initial_terms[1] + np.sum(slab_contribs))
    return total ** 0.25


def exponential_factor(D_contribs):
    """E_d = exp(sum_n k_n sup D_d); +inf on overflow (bounds then vacuous)."""
    exponent = float(np.sum(D_contribs))
    if exponent > 700.0:
        return np.inf, exponent
    return float(np.exp(exponent)), exponent


def condition_check(eta, B_bar, E_d, T, epsilon, d=2):
    """The smallness condition: eta <= (16 (T+1) Bbar E_d^2)^{-1/4} eps^{d-1/2}."""
    if not np.isfinite(E_d) or B_bar <= 0.0:
        rhs = 0.0
    else:
        rhs = (16.0 * (T + 1.0) * B_bar * E_d ** 2) ** -0.25 \
            * epsilon ** (d - 0.5)
    return float(eta), float(rhs), bool(eta <= rhs)


def final_bounds(eta, E_d, epsilon, d, theta_l4l4, theta_l2h1, theta_linfl2):
    """The three conditional error bounds (valid when the condition holds)."""
    b_l4l4 = 2.0 * eta * ((d - 1.0) * E_d) ** 0.25 + theta_l4l4
    b_l2h1 = 2.0 * np.sqrt(2.0) / epsilon * eta ** 2 * np.sqrt(E_d) + theta_l2h1
    b_linfl2 = 2.0 * np.sqrt(2.0) * eta ** 2 * np.sqrt(E_d) + theta_linfl2
    return float(b_l4l4), float(b_l2h1), float(b_linfl2)


def theta_norm_terms(slab_estimates):
    """Accumulated theta norms for the final bounds.

    L4(L4): exact time integration of the affine endpoint bounds to the 4th
    power; L2(H1): same with the energy-norm estimators squared; Linf(L2):
    max of the endpoint L2 estimators.
    """
    acc4 = 0.0
    acc_h1 = 0.0
    linf = 0.0
    for s in slab_estimates:
        acc4 += power_integral(s.E_prev[4], s.E_cur[4], 4, s.k)
        acc_h1 += power_integral(s.E_h1_prev, s.E_h1_cur, 2, s.k)
        linf = max(linf, s.E_prev[2], s.E_cur[2])
    return acc4 ** 0.25, acc_h1 ** 0.5, linf
