"""Hot numerical kernels, with backend selection at import time.

The compiled extension ``acfem._speedups`` provides the fast versions of the
inner loops (CSR matvec, P1 element matrices).  If it is not built, or if the
environment variable ``ACFEM_PURE_PYTHON`` is set, vectorized numpy/scipy
implementations take over.  Both backends return identical results;
``benchmarks/bench_kernels.py`` compares their throughput.
"""
import os

import numpy as np
import scipy.sparse as sp

_MASS_TEMPLATE = (np.ones((3, 3)) + np.eye(3)) / 12.0


def _py_csr_matvec(indptr, indices, data, x):
    """y = A @ x via a throwaway scipy CSR wrapper (no copy)."""
    n = indptr.shape[0] - 1
    a = sp.csr_matrix((data, indices, indptr), shape=(n, n), copy=False)
    return a @ x


def _py_p1_stiffness_local(coords):
    # 2*area*grad(phi_i) = 90-degree rotation of the edge opposite vertex i
    d = coords[:, [2, 0, 1], :] - coords[:, [1, 2, 0], :]
    b = np.stack([d[:, :, 1], -d[:, :, 0]], axis=-1)  # (nt, 3, 2)
    det = d[:, 2, 0] * (-d[:, 1, 1]) - d[:, 2, 1] * (-d[:, 1, 0])
    return np.einsum("tid,tjd->tij", b, b) / (2.0 * det)[:, None, None]


def _py_p1_mass_local(coords):
    v1 = coords[:, 1] - coords[:, 0]
    v2 = coords[:, 2] - coords[:, 0]
    area = 0.5 * (v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])
    return area[:, None, None] * _MASS_TEMPLATE[None, :, :]


def _py_p1_weighted_mass_local(coords, wq, bary, qw):
    v1 = coords[:, 1] - coords[:, 0]
    v2 = coords[:, 2] - coords[:, 0]
    area = 0.5 * (v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])
    m = np.einsum("q,tq,qi,qj->tij", qw, wq, bary, bary)
    return area[:, None, None] * m


if os.environ.get("ACFEM_PURE_PYTHON"):
    _native = None
else:
    try:
        from acfem import _speedups as _native
    except ImportError:
        _native = None

BACKEND = "native" if _native is not None else "python"

if _native is not None:
    def csr_matvec(indptr, indices, data, x):
        return _native.csr_matvec(indptr, indices, data, x)

    p1_stiffness_local = _native.p1_stiffness_local
    p1_mass_local = _native.p1_mass_local
    p1_weighted_mass_local = _native.p1_weighted_mass_local
else:
    csr_matvec = _py_csr_matvec
    p1_stiffness_local = _py_p1_stiffness_local
    p1_mass_local = _py_p1_mass_local
    p1_weighted_mass_local = _py_p1_weighted_mass_local
