"""Backward Euler time stepping for the Allen-Cahn equation.

Each step solves, for U^n in the current space and all basis functions X,

    (U^n - U^{n-1}, X)/k_n + (grad U^n, grad X) + (F(U^n), X)/eps^2 = (f(t_n), X)

by damped Newton iteration with the transferred previous state as initial
guess.  The mesh and the step size may change between steps (estimator-driven
Doerfler marking in space, halve/double heuristic in time).
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from acfem.fem import (FeFunction, FeSpace, F, Fprime, MappedField,
                       assemble_weighted_mass, cross_load, l2_project,
                       load_vector, norm_lp, transfer)
from acfem.linalg import SolverError, cg_solve
from acfem.quadrature import tri_rule


class StepFailure(RuntimeError):
    """Newton or inner-solver failure in a time step."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class RandomNodal:
    """Marker for seeded nodal-noise initial data in [-delta, delta]."""

    delta: float = 0.05
    seed: int = 0


@dataclass
class ModelParams:
    """Problem data: interface length, horizon, initial field, forcing."""

    epsilon: float
    T: float
    u0: object                       # callable (x, y) or RandomNodal
    f: Optional[Callable] = None     # callable (x, y, t); None means zero
    domain: object = None            # Rect, used for default constants
    nonlinear: bool = True           # hook: False drops F (heat equation)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")

    def forcing(self, t):
        if self.f is None:
            return None
        return lambda x, y: self.f(x, y, t)


@dataclass
class NewtonOptions:
    tol: float = 1e-10
    maxit: int = 30
    damping_floor: float = 2.0 ** -20

    def __post_init__(self):
        if not self.tol > 0 or self.maxit < 1:
            raise ValueError("invalid Newton options")


@dataclass
class TimeSlab:
    """One interval (t_{n-1}, t_n]: the unit of error estimation."""

    n: int
    t_prev: float
    t_cur: float
    k: float
    prev: FeFunction
    cur: FeFunction
    newton_residual: float = 0.0
    energy: float = np.nan
    nodal_max: float = np.nan

    @property
    def prev_space(self):
        return self.prev.space

    @property
    def cur_space(self):
        return self.cur.space


def initial_state(params, space):
    """U^0: the L2 projection of u0 (or seeded nodal noise)."""
    if isinstance(params.u0, RandomNodal):
        rng = np.random.default_rng(params.u0.seed)
        vals = rng.uniform(-params.u0.delta, params.u0.delta, space.ndof)
        return FeFunction(space, vals)
    return l2_project(space, params.u0)


def newton_solve(residual_fn, jacobian_fn, x0, opts, atol=0.0):
    """Damped Newton: halving line search on the residual norm.

    Returns (x, final_residual_norm, iterations); the convergence target is
    relative to the residual at the initial guess, with an optional absolute
    floor ``atol`` (the caller's rounding scale: a transferred previous state
    can start so close that tol * initial residual sits below machine
    precision).
    """
    x = np.array(x0, dtype=np.float64)
    r = residual_fn(x)
    rnorm = float(np.linalg.norm(r))
    target = max(opts.tol * rnorm, atol)
    for it in range(opts.maxit):
        if rnorm <= target:
            return x, rnorm, it
        J = jacobian_fn(x)
        dx = cg_solve(J, -r, tol=1e-12)
        s = 1.0
        while True:
            x_try = x + s * dx
            r_try = residual_fn(x_try)
            rnorm_try = float(np.linalg.norm(r_try))
            if rnorm_try < rnorm:
                break
            s *= 0.5
            if s < opts.damping_floor:
                raise StepFailure("Newton damping floor reached", residual=rnorm)
        x, r, rnorm = x_try, r_try, rnorm_try
    if rnorm <= target:
        return x, rnorm, opts.maxit
    raise StepFailure(f"Newton did not converge in {opts.maxit} iterations",
                      residual=rnorm)


def backward_euler_step(prev, cur_space, t_prev, k, params, opts=None):
    """Advance one step; returns (U^n, newton_residual_norm).

    The previous state may live on a different (compatible) mesh; its load
    against the current basis is computed exactly on the common refinement.
    """
    if opts is None:
        opts = NewtonOptions()
    if not k > 0:
        raise ValueError("time step must be positive")
    eps2_inv = params.epsilon ** -2
    t_cur = t_prev + k
    A = cur_space.stiffness()
    M = cur_space.mass()
    prev_load = cross_load(prev, cur_space) / k
    f_cur = params.forcing(t_cur)
    b_f = load_vector(cur_space, f_cur) if f_cur is not None else 0.0
    rhs = prev_load + b_f
    quad4 = tri_rule(4)
    mesh = cur_space.mesh

    def residual(x):
        u = FeFunction(cur_space, x)
        r = M.matvec(x) / k + A.matvec(x) - rhs
        if params.nonlinear:
            r += eps2_inv * load_vector(cur_space, MappedField(u, F), quad=quad4)
        return r

    def jacobian(x):
        J = A.add_scaled(M, 1.0 / k)
        if params.nonlinear:
            u = FeFunction(cur_space, x)
            Mw = assemble_weighted_mass(cur_space, MappedField(u, Fprime), quad=quad4)
            J = J.add_scaled(Mw, eps2_inv)
        return J

    x0 = transfer(prev, cur_space).coeffs
    scale = (np.linalg.norm(rhs) + np.linalg.norm(M.matvec(x0)) / k
             + np.linalg.norm(A.matvec(x0)))
    atol = 100.0 * np.finfo(float).eps * scale
    try:
        x, rnorm, _ = newton_solve(residual, jacobian, x0, opts, atol=atol)
    except SolverError as exc:
        raise StepFailure(f"inner solve failed: {exc}", residual=exc.residual)
    return FeFunction(cur_space, x), rnorm


def gl_energy(U, epsilon):
    """Ginzburg-Landau energy: 0.5*||grad U||^2 + ||U^2-1||^2/(4 eps^2)."""
    grad_part = 0.5 * float(U.coeffs @ U.space.stiffness().matvec(U.coeffs))
    well = norm_lp(MappedField(U, lambda v: v * v - 1.0), U.mesh, 2, quad=tri_rule(4))
    return grad_part + well ** 2 / (4.0 * epsilon ** 2)


@dataclass
class SlabFeedback:
    """Estimator feedback to the time loop (both entries optional)."""

    time_term: Optional[float] = None      # k_n * L1, drives the k heuristic
    indicators: Optional[np.ndarray] = None  # per-element spatial indicators


@dataclass
class TimePolicy:
    k: float
    adaptive: bool = False
    time_tol: float = np.inf
    k_min: float = 0.0
    k_max: float = np.inf


def doerfler_mark(indicators, theta):
    """Smallest cell set carrying a theta fraction of the total indicator."""
    order = np.argsort(indicators)[::-1]
    total = float(indicators.sum())
    if total <= 0.0:
        return np.array([], dtype=np.int64)
    acc = np.cumsum(indicators[order])
    count = int(np.searchsorted(acc, theta * total) + 1)
    return order[:count]


def run_simulation(params, space0, policy, newton=None, on_slab=None,
                   adapt_space=False, theta_mark=0.5, max_retries=12):
    """Drive backward Euler over (0, T]; returns (U^0, list of TimeSlab).

    After each accepted step the ``on_slab`` hook runs (estimators live
    there); it may return SlabFeedback to drive step-size control and
    Doerfler marking.  With adaptivity off the loop is deterministic and
    the slab count for fixed k is ceil(T/k).
    """
    from acfem.mesh import bisect

    if newton is None:
        newton = NewtonOptions()
    U = initial_state(params, space0)
    slabs = []
    t = 0.0
    n = 1
    k = policy.k
    space = space0
    retries = 0
    while t < params.T - 1e-12 * params.T:
        k_eff = min(k, params.T - t)
        cur, rnorm = backward_euler_step(U, space, t, k_eff, params, newton)
        slab = TimeSlab(n=n, t_prev=t, t_cur=t + k_eff, k=k_eff, prev=U,
                        cur=cur, newton_residual=rnorm,
                        energy=gl_energy(cur, params.epsilon),
                        nodal_max=cur.max_abs())
        feedback = on_slab(slab) if on_slab is not None else None
        if (policy.adaptive and feedback is not None
                and feedback.time_term is not None
                and feedback.time_term > policy.time_tol
                and k_eff > policy.k_min and retries < max_retries):
            k = max(0.5 * k_eff, policy.k_min)
            retries += 1
            continue
        slabs.append(slab)
        U = cur
        t += k_eff
        n += 1
        retries = 0
        if (policy.adaptive and feedback is not None
                and feedback.time_term is not None
                and feedback.time_term < 0.1 * policy.time_tol):
            k = min(2.0 * k, policy.k_max)
        if adapt_space and feedback is not None and feedback.indicators is not None:
            marked = doerfler_mark(feedback.indicators, theta_mark)
            if marked.size:
                space = FeSpace(bisect(space.mesh, marked))
    return slabs
