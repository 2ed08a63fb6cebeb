"""Compare the compiled and numpy backends of the batched polynomial kernels.

Usage::

    python benchmarks/bench_kernels.py [--points 200000] [--repeat 3]

Reports the best wall time per call and the speedup for a few (n, d) shapes
that occur in the solves (Zermelo/regatta at d=2..6, Brockett at d=2).
"""
import argparse
import timeit

import numpy as np

from mintime import _kernels_py
from mintime.polybasis import PolyBasis

try:
    from mintime import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

SHAPES = [(1, 2), (2, 2), (2, 4), (2, 6), (6, 2)]


def bench(fn, exps, coeffs, pts, repeat):
    return min(timeit.repeat(lambda: fn(exps, coeffs, pts), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--points", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'n':>2} {'d':>2} {'N':>5}  {'kernel':<16} {'python s':>9} {'cython s':>9} {'speedup':>8}")
    for n, d in SHAPES:
        basis = PolyBasis(n, d)
        exps = basis.exps.astype(np.int64)
        coeffs = rng.standard_normal(basis.dim)
        pts = np.ascontiguousarray(rng.uniform(-1, 1, (args.points, n + 1)))
        for name in ("poly_value", "poly_value_grad"):
            t_py = bench(getattr(_kernels_py, name), exps, coeffs, pts, args.repeat)
            if _compiled is None:
                t_cy, ratio = float("nan"), float("nan")
            else:
                t_cy = bench(getattr(_compiled, name), exps, coeffs, pts, args.repeat)
                ratio = t_py / t_cy
            print(f"{n:>2} {d:>2} {basis.dim:>5}  {name:<16} {t_py:>9.4f} {t_cy:>9.4f} {ratio:>7.1f}x")


if __name__ == "__main__":
    main()
