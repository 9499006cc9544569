# Compiled inner loops: CSR matrix-vector products and P1 element matrices.
# Each function has a vectorized numpy twin in acfem.kernels; signatures and
# results must stay interchangeable.

import numpy as np

cimport numpy as cnp

cnp.import_array()


def csr_matvec(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
               const double[::1] data, const double[::1] x):
    """y = A @ x for a CSR matrix given by (indptr, indices, data)."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] y = out
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(indptr[i], indptr[i + 1]):
            acc += data[j] * x[indices[j]]
        y[i] = acc
    return out


def p1_stiffness_local(const double[:, :, ::1] coords):
    """Local stiffness matrices for P1 triangles.

    coords has shape (ntri, 3, 2); returns (ntri, 3, 3) with
    K_ij = area * grad(phi_i) . grad(phi_j).
    """
    cdef Py_ssize_t nt = coords.shape[0]
    cdef cnp.ndarray[double, ndim=3] out = np.empty((nt, 3, 3), dtype=np.float64)
    cdef double[:, :, ::1] K = out
    cdef Py_ssize_t t, i, j
    cdef double x0, y0, x1, y1, x2, y2, det, inv4a
    cdef double bx[3]
    cdef double by[3]
    for t in range(nt):
        x0 = coords[t, 0, 0]; y0 = coords[t, 0, 1]
        x1 = coords[t, 1, 0]; y1 = coords[t, 1, 1]
        x2 = coords[t, 2, 0]; y2 = coords[t, 2, 1]
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        # 2*area*grad(phi_i) = edge opposite vertex i rotated by 90 degrees
        bx[0] = y1 - y2; by[0] = x2 - x1
        bx[1] = y2 - y0; by[1] = x0 - x2
        bx[2] = y0 - y1; by[2] = x1 - x0
        inv4a = 1.0 / (2.0 * det)  # area = det/2, K = (b_i.b_j)/(4*area)
        for i in range(3):
            for j in range(3):
                K[t, i, j] = (bx[i] * bx[j] + by[i] * by[j]) * inv4a
    return out


def p1_mass_local(const double[:, :, ::1] coords):
    """Local mass matrices for P1 triangles: M_ij = area*(1+delta_ij)/12."""
    cdef Py_ssize_t nt = coords.shape[0]
    cdef cnp.ndarray[double, ndim=3] out = np.empty((nt, 3, 3), dtype=np.float64)
    cdef double[:, :, ::1] M = out
    cdef Py_ssize_t t, i, j
    cdef double x0, y0, x1, y1, x2, y2, area
    for t in range(nt):
        x0 = coords[t, 0, 0]; y0 = coords[t, 0, 1]
        x1 = coords[t, 1, 0]; y1 = coords[t, 1, 1]
        x2 = coords[t, 2, 0]; y2 = coords[t, 2, 1]
        area = 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
        for i in range(3):
            for j in range(3):
                M[t, i, j] = area / 12.0 if i != j else area / 6.0
    return out


def p1_weighted_mass_local(const double[:, :, ::1] coords, const double[:, ::1] wq,
                           const double[:, ::1] bary, const double[::1] qw):
    """Local weighted mass matrices: M_ij = area * sum_q qw_q w(x_q) l_i(q) l_j(q).

    wq has shape (ntri, nq): weight values at the quadrature points of each
    triangle; bary is (nq, 3) barycentric points, qw the (nq,) weights.
    """
    cdef Py_ssize_t nt = coords.shape[0]
    cdef Py_ssize_t nq = qw.shape[0]
    cdef cnp.ndarray[double, ndim=3] out = np.zeros((nt, 3, 3), dtype=np.float64)
    cdef double[:, :, ::1] M = out
    cdef Py_ssize_t t, q, i, j
    cdef double x0, y0, x1, y1, x2, y2, area, c
    for t in range(nt):
        x0 = coords[t, 0, 0]; y0 = coords[t, 0, 1]
        x1 = coords[t, 1, 0]; y1 = coords[t, 1, 1]
        x2 = coords[t, 2, 0]; y2 = coords[t, 2, 1]
        area = 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
        for q in range(nq):
            c = area * qw[q] * wq[t, q]
            for i in range(3):
                for j in range(3):
                    M[t, i, j] += c * bary[q, i] * bary[q, j]
    return out
