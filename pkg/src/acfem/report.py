"""Run-level aggregation: per-slab estimates, spectral series, eta_d, the
smallness condition, final error bounds, and the report.csv writer.

Estimation is separated from simulation: it consumes the recorded states
(U^0 plus one TimeSlab per step) and can be re-run from checkpoints with
different constants.  All spectral content is heuristic (discrete eigenvalue
inflated by a safety factor), and the report labels it as such.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from acfem.estimators import (ConstantsConfig, compute_g0, compute_g_h,
                              condition_check, eta_d, exponential_factor,
                              final_bounds, initial_condition_terms,
                              level_estimates, slab_terms, theta_norm_terms)
from acfem.spectral import SpectralSeries, fit_exponent, lambda_integral, sample_levels
from acfem.stepper import RandomNodal


@dataclass
class RunReport:
    """Everything the estimation pass produces for one run."""

    d: int
    epsilon: float
    T: float
    constants: ConstantsConfig
    levels: list
    slab_estimates: list
    init_terms: tuple
    eta: float
    B_bar: float
    E_d: float
    D_integral: float
    condition_lhs: float
    condition_rhs: float
    condition_satisfied: bool
    bound_l4l4: float
    bound_l2h1: float
    bound_linfl2: float
    theta_l4l4: float
    theta_l2h1: float
    theta_linfl2: float
    spectral: Optional[SpectralSeries] = None
    spectral_label: str = "heuristic-spectral"


def estimate_run(U0, slabs, params, constants=None, d=2, eigen_tol=1e-8,
                 n_gauss=4, quad=None):
    """Full estimation pass over recorded states.

    U0 is the initial FeFunction; slabs the list of TimeSlab records.
    Eigenvalue solves run at every time level (warm-started); everything
    else is quadrature over the stored meshes.
    """
    if constants is None:
        if params.domain is not None:
            constants = ConstantsConfig.for_domain(params.domain)
        else:
            constants = ConstantsConfig()

    # per-level residual fields and spatial estimators
    levels = [level_estimates(0.0, U0, compute_g0(U0, params), constants)]
    for slab in slabs:
        g = compute_g_h(slab, params)
        levels.append(level_estimates(slab.t_cur, slab.cur, g, constants,
                                      newton_res=slab.newton_residual))

    # spectral series at the level times
    samples = sample_levels([(lev.t, lev.U) for lev in levels],
                            params.epsilon,
                            safety=constants.spectral_safety, tol=eigen_tol)
    for lev, s in zip(levels, samples):
        lev.lambda_h = s.lambda_h
        lev.Lambda_h = s.Lambda_h
        lev.eigen_residual = s.residual

    estimates = []
    for i, slab in enumerate(slabs):
        prev_prev = slabs[i - 1].prev if i >= 1 else None
        k_prev = slabs[i - 1].k if i >= 1 else None
        est = slab_terms(slab, levels[i], levels[i + 1], params, constants,
                         d=d, prev_prev=prev_prev, k_prev=k_prev,
                         Lambda_prev=samples[i].Lambda_h,
                         Lambda_cur=samples[i + 1].Lambda_h,
                         n_gauss=n_gauss, quad=quad)
        estimates.append(est)

    u0_callable = None if isinstance(params.u0, RandomNodal) else params.u0
    init_terms = initial_condition_terms(u0_callable, U0,
                                         levels[0].E_p[2], levels[0].E_p[4],
                                         constants, quad=quad)

    eta = eta_d(init_terms, [e.eta4_contrib for e in estimates])
    B_bar = max((e.B_slab for e in estimates), default=0.0)
    E_val, D_integral = exponential_factor([e.D_contrib for e in estimates])
    lhs, rhs, ok = condition_check(eta, B_bar, E_val, params.T,
                                   params.epsilon, d=d)
    th4, th_h1, th_inf = theta_norm_terms(estimates)
    b4, bh1, binf = final_bounds(eta, E_val, params.epsilon, d, th4, th_h1, th_inf)

    integral = lambda_integral(samples, slabs)
    series = SpectralSeries(samples=samples, integral=integral,
                            m_fitted=fit_exponent(integral, params.epsilon))

    return RunReport(
        d=d, epsilon=params.epsilon, T=params.T, constants=constants,
        levels=levels, slab_estimates=estimates, init_terms=init_terms,
        eta=eta, B_bar=B_bar, E_d=E_val, D_integral=D_integral,
        condition_lhs=lhs, condition_rhs=rhs, condition_satisfied=ok,
        bound_l4l4=b4, bound_l2h1=bh1, bound_linfl2=binf,
        theta_l4l4=th4, theta_l2h1=th_h1, theta_linfl2=th_inf,
        spectral=series,
    )


REPORT_COLUMNS = [
    "n", "t_n", "k_n", "L1", "int_L2", "int_Theta1", "int_Theta2",
    "E2_tn", "E4_tn", "E6_tn", "Einf_tn", "mesh_change_E2", "mesh_change_E4",
    "alpha_sup", "beta_sup", "gamma_sup", "lambda_h", "Lambda_h",
    "eta4_cum", "D_cum", "newton_res",
]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_report_csv(report, target):
    """report.csv: one row per slab, then a key,value footer block.

    Numbers are written with repr so identical runs produce byte-identical
    files.
    """
    own = isinstance(target, (str, bytes))
    f = open(target, "w") if own else target
    try:
        f.write(",".join(REPORT_COLUMNS) + "\n")
        eta4_cum = report.init_terms[0] + report.init_terms[1]
        d_cum = 0.0
        for e in report.slab_estimates:
            eta4_cum += e.eta4_contrib
            d_cum += e.D_contrib
            row = [e.n, e.t_cur, e.k, e.L1, e.int_L2, e.int_Theta1,
                   e.int_Theta2, e.E_cur[2], e.E_cur[4], e.E_cur[6],
                   e.E_inf_cur, e.mesh_change[2], e.mesh_change[4],
                   e.alpha_sup, e.beta_sup, e.gamma_sup, e.lambda_h,
                   e.Lambda_h, eta4_cum, d_cum, e.newton_res]
            f.write(",".join(_fmt(v) for v in row) + "\n")
        foot = [
            ("eta_d", report.eta),
            ("E_d", report.E_d),
            ("D_integral", report.D_integral),
            ("B_bar", report.B_bar),
            ("condition_lhs", report.condition_lhs),
            ("condition_rhs", report.condition_rhs),
            ("condition_satisfied", report.condition_satisfied),
            ("bound_L4L4", report.bound_l4l4),
            ("bound_L2H1", report.bound_l2h1),
            ("bound_LinfL2", report.bound_linfl2),
            ("theta_L4L4", report.theta_l4l4),
            ("theta_L2H1", report.theta_l2h1),
            ("theta_LinfL2", report.theta_linfl2),
            ("init_term_rho2", report.init_terms[0]),
            ("init_term_rho4", report.init_terms[1]),
            ("spectral_integral", report.spectral.integral if report.spectral else 0.0),
            ("m_fitted", report.spectral.m_fitted if report.spectral else 0.0),
            ("spectral_label", report.spectral_label),
            ("d", report.d),
            ("epsilon", report.epsilon),
            ("T", report.T),
        ]
        foot.extend(sorted(report.constants.as_dict().items()))
        f.write("# footer\n")
        for key, value in foot:
            f.write(f"{key},{_fmt(value)}\n")
    finally:
        if own:
            f.close()


def read_report_footer(path):
    """Parse the footer block of a report.csv into a dict of strings."""
    out = {}
    with open(path) as f:
        in_footer = False
        for line in f:
            line = line.strip()
            if line == "# footer":
                in_footer = True
                continue
            if in_footer and line:
                key, _, value = line.partition(",")
                out[key] = value
    return out
