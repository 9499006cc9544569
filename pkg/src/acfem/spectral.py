"""Principal eigenvalue of the linearized operator about the discrete state.

For a state U on a P1 space the operator is -lap + F'(U)/eps^2; its smallest
pencil eigenvalue mu against the mass matrix gives lambda_h = -mu (so positive
lambda_h means instability).  The reported bound proxy Lambda_h inflates
lambda_h by a safety factor toward larger values; certified eigenvalue bounds
are out of scope, so downstream bounds are labelled heuristic-spectral.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from acfem.fem import FeFunction, Fprime, MappedField, assemble_weighted_mass, transfer
from acfem.linalg import smallest_eig_pencil


@dataclass
class SpectralSample:
    """lambda_h at one time, its inflated proxy, and the eigen residual."""

    t: float
    lambda_h: float
    Lambda_h: float
    residual: float
    vector: Optional[np.ndarray] = None


@dataclass
class SpectralSeries:
    """Endpoint samples, the positive-part time integral, and a fitted
    topological-change exponent (integral <= log(eps^-m) with C = 0)."""

    samples: list
    integral: float
    m_fitted: float


def principal_eigenvalue(U, epsilon, safety=0.05, tol=1e-8, maxit=None,
                         v0=None, t=0.0, fprime_const=None):
    """Smallest eigenvalue of the linearization about U.

    Assembles S = A + M_{F'(U)}/eps^2 against the mass matrix M and returns
    lambda_h = -mu_min.  ``fprime_const`` replaces F'(U) by a constant (test
    hook).  Lambda_h = lambda_h + safety*|lambda_h| >= lambda_h.
    """
    space = U.space
    A = space.stiffness()
    M = space.mass()
    if fprime_const is not None:
        S = A.add_scaled(M, fprime_const / epsilon ** 2)
    else:
        Mw = assemble_weighted_mass(space, MappedField(U, Fprime))
        S = A.add_scaled(Mw, epsilon ** -2)
    result = smallest_eig_pencil(S, M, tol=tol, maxit=maxit, v0=v0)
    lam = -result.value
    Lam = lam + safety * abs(lam)
    return SpectralSample(t=t, lambda_h=lam, Lambda_h=Lam,
                          residual=result.residual, vector=result.vector)


def lambda_integral(samples, slabs):
    """Conservative quadrature of (Lambda_h)_+ over [0, T].

    Per slab the contribution is k_n * max(Lambda at both endpoints)_+,
    an upper rule for the endpoint-sampled series.
    """
    by_time = {s.t: s for s in samples}
    total = 0.0
    for slab in slabs:
        lam_prev = by_time[slab.t_prev].Lambda_h
        lam_cur = by_time[slab.t_cur].Lambda_h
        total += slab.k * max(max(lam_prev, lam_cur), 0.0)
    return total


def sample_levels(levels, epsilon, safety=0.05, tol=1e-8):
    """Eigenvalue samples at every time level, warm-starting across meshes.

    ``levels`` is a list of (t, FeFunction).  Returns a list of samples in
    time order; the previous eigenvector (transferred when the mesh changed)
    seeds the next solve.
    """
    samples = []
    v_warm = None
    warm_space = None
    for t, U in levels:
        v0 = None
        if v_warm is not None:
            if warm_space is U.space:
                v0 = v_warm
            else:
                v0 = transfer(FeFunction(warm_space, v_warm), U.space).coeffs
        s = principal_eigenvalue(U, epsilon, safety=safety, tol=tol, v0=v0, t=t)
        samples.append(s)
        v_warm = s.vector
        warm_space = U.space
    return samples


def fit_exponent(integral, epsilon):
    """m with integral = log(eps^-m), clamped to m >= 0 (C = 0 convention)."""
    if epsilon >= 1.0:
        return 0.0
    return max(0.0, integral / np.log(1.0 / epsilon))


def build_series(levels, slabs, epsilon, safety=0.05, tol=1e-8):
    samples = sample_levels(levels, epsilon, safety=safety, tol=tol)
    integral = lambda_integral(samples, slabs)
    return SpectralSeries(samples=samples, integral=integral,
                          m_fitted=fit_exponent(integral, epsilon))
