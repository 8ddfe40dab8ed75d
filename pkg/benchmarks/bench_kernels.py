"""Compare the compiled and NumPy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from infoleak import _pykernels

try:
    from infoleak import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    for n in (8, 12, 16, 20):
        P, Q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        yield f"subset_sup  n={n:<5d}", "subset_sup", (P, Q, 1.5)
    for n_pts, n_ctr, d in ((900, 2100, 2), (900, 2100, 20), (3000, 7000, 2)):
        pts, ctr = rng.normal(size=(n_pts, d)), rng.normal(size=(n_ctr, d))
        bw = np.full(d, 0.3)
        yield f"gauss_log_mean {n_pts}x{n_ctr} d={d}", "gauss_log_mean", (pts, ctr, bw)


def best_of(fn, args, repeat):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'case':<34s}{'python':>12s}{'cython':>12s}{'speedup':>10s}")
    for label, name, a in cases(rng):
        tp = best_of(getattr(_pykernels, name), a, args.repeat)
        if _ckernels is None:
            print(f"{label:<34s}{tp * 1e3:10.3f}ms{'n/a':>12s}")
            continue
        tc = best_of(getattr(_ckernels, name), a, args.repeat)
        print(f"{label:<34s}{tp * 1e3:10.3f}ms{tc * 1e3:10.3f}ms{tp / tc:9.1f}x")


if __name__ == "__main__":
    main()
