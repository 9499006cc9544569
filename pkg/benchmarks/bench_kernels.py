"""Throughput comparison of the compiled kernels vs the numpy/scipy fallback.

Both backends are imported directly (regardless of which one the package
selected), so one process measures both.  Workloads mirror the package's hot
paths: CSR matvec inside CG/eigensolves and P1 element-matrix batches.

Run:  python3 benchmarks/bench_kernels.py [--nmax 256]
"""
import argparse
import time

import numpy as np

from acfem import kernels
from acfem.fem import FeSpace
from acfem.mesh import Rect, build_macro_mesh
from acfem.quadrature import tri_rule

try:
    from acfem import _speedups as native
except ImportError:
    native = None


def timeit(fn, *args, repeat=5, inner=1):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def bench_matvec(n):
    space = FeSpace(build_macro_mesh(Rect(0, 0, 1, 1), (n, n)))
    A = space.stiffness()
    x = np.random.default_rng(0).standard_normal(A.n)
    inner = max(1, 2_000_000 // max(A.nnz, 1))
    t_py = timeit(kernels._py_csr_matvec, A.indptr, A.indices, A.data, x,
                  inner=inner)
    t_nat = (timeit(native.csr_matvec, A.indptr, A.indices, A.data, x,
                    inner=inner) if native else np.nan)
    return A.n, A.nnz, t_py, t_nat


def bench_assembly(n, weighted=False):
    mesh = build_macro_mesh(Rect(0, 0, 1, 1), (n, n))
    coords = np.ascontiguousarray(mesh.cell_coords())
    if weighted:
        quad = tri_rule(4)
        wq = np.ascontiguousarray(
            np.random.default_rng(1).standard_normal((mesh.num_cells,
                                                      quad.npoints)))
        bary = np.ascontiguousarray(quad.bary)
        w = np.ascontiguousarray(quad.weights)
        t_py = timeit(kernels._py_p1_weighted_mass_local, coords, wq, bary, w)
        t_nat = (timeit(native.p1_weighted_mass_local, coords, wq, bary, w)
                 if native else np.nan)
    else:
        t_py = timeit(kernels._py_p1_stiffness_local, coords)
        t_nat = (timeit(native.p1_stiffness_local, coords)
                 if native else np.nan)
    return mesh.num_cells, t_py, t_nat


def fmt(seconds):
    return f"{seconds * 1e3:9.3f} ms" if np.isfinite(seconds) else "      n/a"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--nmax", type=int, default=256)
    args = parser.parse_args()

    print(f"selected backend: {kernels.BACKEND}"
          + ("" if native else "  (extension not built: python column only)"))
    print("\ncsr_matvec (python = scipy CSR wrapper)")
    print(f"{'ndof':>8} {'nnz':>10} {'python':>12} {'native':>12} {'speedup':>8}")
    n = 32
    while n <= args.nmax:
        ndof, nnz, t_py, t_nat = bench_matvec(n)
        ratio = t_py / t_nat if np.isfinite(t_nat) else np.nan
        print(f"{ndof:>8} {nnz:>10} {fmt(t_py)} {fmt(t_nat)} {ratio:7.2f}x")
        n *= 2

    for weighted in (False, True):
        name = "p1_weighted_mass_local" if weighted else "p1_stiffness_local"
        print(f"\n{name} (python = vectorized numpy)")
        print(f"{'ncells':>8} {'python':>12} {'native':>12} {'speedup':>8}")
        n = 32
        while n <= args.nmax:
            nc, t_py, t_nat = bench_assembly(n, weighted=weighted)
            ratio = t_py / t_nat if np.isfinite(t_nat) else np.nan
            print(f"{nc:>8} {fmt(t_py)} {fmt(t_nat)} {ratio:7.2f}x")
            n *= 2


if __name__ == "__main__":
    main()
