"""Compare the numba kernels against the numpy fallback on a real Stokes matrix.

    python3 benchmarks/bench_kernels.py [--n 64] [--degree 2] [--repeat 5]

Each kernel is run once to warm up the JIT, then timed ``repeat`` times; the
best time is reported.  Results from both paths are checked for agreement.
"""
import argparse
import time

import numpy as np

from ldgstokes import _kernels
from ldgstokes.blocklinalg import BlockSparseMatrix
from ldgstokes.cases import CaseConfig
from ldgstokes.driver import prepare
from ldgstokes.multigrid import diagonal_blocks, smooth


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--degree", type=int, default=2)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba unavailable (or LDGSTOKES_NUMBA=0); nothing to compare")

    prep = prepare(CaseConfig(case="periodic", n=args.n, degree=args.degree))
    level = prep.mg.levels[0]
    A, bs = level.matrix, level.bs
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, A.shape[0])
    b = rng.uniform(-1, 1, A.shape[0])
    B = BlockSparseMatrix.from_scipy(A, (bs, bs))
    D = diagonal_blocks(A, bs)
    lu, piv = level.factors.lu, level.factors.piv
    R = rng.uniform(-1, 1, (D.shape[0], bs))
    print(f"2D periodic n={args.n} p={args.degree}: {A.shape[0]} unknowns, block size {bs}, "
          f"{B.nnzb} blocks")

    cases = {
        "bsr spmv": lambda nb: _kernels.bsr_spmv(B.indptr, B.indices, B.data,
                                                 x.reshape(-1, bs), B.block_rows, use_numba=nb),
        "block LU factor": lambda nb: _kernels.lu_factor_batch(D, use_numba=nb),
        "block LU solve": lambda nb: _kernels.lu_solve_batch(lu, piv, R, use_numba=nb),
        "GS sweep": lambda nb: smooth(level, x.copy(), b, 1, use_numba=nb),
    }
    print(f"{'kernel':<18}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, fn in cases.items():
        r_np, r_nb = fn(False), fn(True)
        if isinstance(r_np, tuple):
            r_np, r_nb = r_np[0], r_nb[0]
        diff = float(np.max(np.abs(np.asarray(r_np) - np.asarray(r_nb))))
        t_np = best_of(lambda: fn(False), args.repeat)
        t_nb = best_of(lambda: fn(True), args.repeat)
        print(f"{name:<18}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
