"""Sparse symmetric linear algebra: CSR storage, Jacobi-preconditioned
conjugate gradients, and shift-invert power iteration for the smallest
eigenvalue of a symmetric definite pencil S v = mu M v.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from acfem import kernels


class SolverError(RuntimeError):
    """Iterative solver failure; carries the last residual and iteration count."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SparseSym:
    """Symmetric sparse matrix in CSR form with sorted column indices."""

    __slots__ = ("n", "indptr", "indices", "data", "_sp", "_diag")

    def __init__(self, n, indptr, indices, data):
        self.n = int(n)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self._sp = None
        self._diag = None

    @classmethod
    def from_coo(cls, n, rows, cols, vals):
        """Assemble from triplets; duplicate entries are summed."""
        a = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        a.sum_duplicates()
        a.sort_indices()
        return cls(n, a.indptr, a.indices, a.data)

    @property
    def nnz(self):
        return self.data.shape[0]

    def matvec(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if kernels.BACKEND == "native":
            return kernels.csr_matvec(self.indptr, self.indices, self.data, x)
        if self._sp is None:
            self._sp = sp.csr_matrix((self.data, self.indices, self.indptr),
                                     shape=(self.n, self.n), copy=False)
        return self._sp @ x

    __matmul__ = matvec

    def diagonal(self):
        if self._diag is None:
            a = sp.csr_matrix((self.data, self.indices, self.indptr),
                              shape=(self.n, self.n), copy=False)
            self._diag = np.asarray(a.diagonal())
        return self._diag

    def to_dense(self):
        a = np.zeros((self.n, self.n))
        for i in range(self.n):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            a[i, self.indices[lo:hi]] = self.data[lo:hi]
        return a

    def add_scaled(self, other, factor):
        """self + factor * other as a new SparseSym (patterns may differ)."""
        a = sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))
        b = sp.csr_matrix((other.data, other.indices, other.indptr), shape=(other.n, other.n))
        c = (a + factor * b).tocsr()
        c.sort_indices()
        return SparseSym(self.n, c.indptr, c.indices, c.data)

    def scaled(self, factor):
        return SparseSym(self.n, self.indptr.copy(), self.indices.copy(),
                         factor * self.data)

    def symmetry_defect(self):
        """max |A - A^T| relative to max |A| (0 for exactly symmetric)."""
        a = sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))
        num = sp.linalg.norm(a - a.T, np.inf) if self.nnz else 0.0
        den = np.abs(self.data).max() if self.nnz else 1.0
        return float(num / den) if den else 0.0


def cg_solve(A, b, tol=1e-10, maxit=None, x0=None):
    """Jacobi-preconditioned CG; returns x with ||b - Ax|| <= tol*||b||.

    Raises SolverError on non-convergence, carrying the final residual.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    if maxit is None:
        maxit = max(10 * n, 100)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n)
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("non-positive diagonal entry; matrix not SPD")
    dinv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A.matvec(x) if x0 is not None else b.copy()
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    target = tol * bnorm
    for it in range(maxit):
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target:
            return x
        Ap = A.matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise SolverError("indefinite matrix encountered in CG",
                              residual=rnorm / bnorm, iterations=it)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    rnorm = float(np.linalg.norm(b - A.matvec(x)))
    if rnorm <= target:
        return x
    raise SolverError(f"CG did not converge in {maxit} iterations",
                      residual=rnorm / bnorm, iterations=maxit)


def gershgorin_lower(S, M):
    """A number <= the smallest eigenvalue of the pencil S v = mu M v,
    from Gershgorin row sums of diag(M)^{-1/2} S diag(M)^{-1/2}."""
    dm = M.diagonal()
    if np.any(dm <= 0):
        raise SolverError("M must have positive diagonal")
    scale = 1.0 / np.sqrt(dm)
    lo = np.inf
    for i in range(S.n):
        beg, end = S.indptr[i], S.indptr[i + 1]
        cols = S.indices[beg:end]
        vals = S.data[beg:end] * scale[i] * scale[cols]
        diag = 0.0
        offsum = 0.0
        for c, v in zip(cols, vals):
            if c == i:
                diag = v
            else:
                offsum += abs(v)
        lo = min(lo, diag - offsum)
    return float(lo)


@dataclass
class EigenResult:
    """Smallest pencil eigenpair; vector is M-normalized."""

    value: float
    vector: np.ndarray
    iterations: int
    residual: float


def smallest_eig_pencil(S, M, tol=1e-8, maxit=None, v0=None):
    """Smallest eigenvalue of S v = mu M v by shift-invert power iteration.

    The shift sits below the Gershgorin lower bound of the pencil, so
    S - sigma*M is positive definite; inner solves reuse the CG solver at
    a hundredth of the outer tolerance.  The returned pair satisfies
    ||(S - mu M) v||_2 / ||v||_2 <= tol and v^T M v = 1.
    """
    n = S.n
    if maxit is None:
        maxit = max(10 * n, 100)
    g = gershgorin_lower(S, M)
    sigma = g - 1e-6 * (1.0 + abs(g))
    inner_tol = 1e-2 * tol

    rng = np.random.default_rng(1234)
    v = rng.standard_normal(n) if v0 is None else np.array(v0, dtype=np.float64)
    if not np.any(v):
        v = np.ones(n)

    total_its = 0
    for attempt in range(4):
        A_shift = S.add_scaled(M, -sigma)
        try:
            mu, vec, its, res = _shift_invert_loop(A_shift, S, M, v, sigma,
                                                   tol, inner_tol, maxit)
        except SolverError:
            # shift not far enough below the spectrum; back off and retry
            sigma = sigma - 2.0 ** attempt * (1.0 + abs(sigma))
            continue
        total_its += its
        if res <= tol:
            return EigenResult(value=mu, vector=vec, iterations=total_its,
                               residual=res)
        break
    else:
        raise SolverError("could not find a definite shift for the pencil")

    # Budget exhausted with the conservative shift: restart once with the
    # shift pulled just below the current Rayleigh quotient.  A slight
    # overshoot past the smallest eigenvalue still converges to it (it stays
    # the nearest eigenvalue); an indefinite inner system is caught and the
    # margin widened.
    delta = max(res, 1e-3 * (1.0 + abs(mu)))
    for attempt in range(4):
        try:
            A_shift = S.add_scaled(M, -(mu - delta))
            mu2, vec, its, res = _shift_invert_loop(A_shift, S, M, vec,
                                                    mu - delta, tol,
                                                    inner_tol, maxit)
        except SolverError:
            delta *= 8.0
            continue
        total_its += its
        if res <= tol:
            return EigenResult(value=mu2, vector=vec, iterations=total_its,
                               residual=res)
        mu = mu2
        delta = max(res, 1e-3 * delta)
    raise SolverError("eigensolver stagnated", residual=res,
                      iterations=total_its)


def _ritz_smallest(S, M, vectors):
    """Smallest Ritz pair of the pencil on span(vectors) (M-orthonormalized)."""
    basis = []
    for u in vectors:
        w = u.copy()
        for b in basis:
            w -= float(M.matvec(b) @ w) * b
        norm = np.sqrt(float(w @ M.matvec(w)))
        if norm > 1e-8:
            basis.append(w / norm)
    k = len(basis)
    t = np.empty((k, k))
    sb = [S.matvec(b) for b in basis]
    for i in range(k):
        for j in range(i, k):
            t[i, j] = t[j, i] = float(basis[i] @ sb[j])
    vals, vecs = np.linalg.eigh(t)
    v = sum(c * b for c, b in zip(vecs[:, 0], basis))
    norm = np.sqrt(float(v @ M.matvec(v)))
    return v / norm


def _shift_invert_loop(A_shift, S, M, v, sigma, tol, inner_tol, maxit):
    # Power iteration on (S - sigma M)^{-1} M, accelerated by a Rayleigh-Ritz
    # step on span{new iterate, current, previous} (plain power iteration is
    # arbitrarily slow when the bottom of the spectrum clusters).
    mnorm = np.sqrt(float(v @ M.matvec(v)))
    if mnorm == 0.0:
        raise SolverError("degenerate start vector")
    v = v / mnorm
    prev = None
    mu = float(v @ S.matvec(v))
    res = np.inf
    for it in range(1, maxit + 1):
        w = cg_solve(A_shift, M.matvec(v), tol=inner_tol)
        vectors = [w, v] if prev is None else [w, v, prev]
        cand = _ritz_smallest(S, M, vectors)
        prev = v
        v = cand
        Sv = S.matvec(v)
        Mv = M.matvec(v)
        mu = float(v @ Sv)  # Rayleigh quotient with v^T M v = 1
        res = float(np.linalg.norm(Sv - mu * Mv) / np.linalg.norm(v))
        if res <= tol:
            return mu, v, it, res
    return mu, v, maxit, res
