"""Time the RK4 kernel on the numba and pure-numpy paths.

    python benchmarks/bench_kernels.py [--steps N] [--states n] [--repeat k]
"""
import argparse
import time

import numpy as np

from coniclpv import _kernels


def case(steps, n, m, seed=0):
    rng = np.random.default_rng(seed)
    h = np.full(steps, 1e-3)
    A = [rng.standard_normal((steps, n, n)) - n * np.eye(n) for _ in range(3)]
    B = [rng.standard_normal((steps, n, m)) for _ in range(3)]
    u = [rng.standard_normal((steps, m)) for _ in range(3)]
    return (h, *A, *B, *u, np.zeros(n), 1e9)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--states", type=int, nargs="+", default=[1, 3, 8])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'n':>3} {'steps':>7} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8}")
    for n in args.states:
        a = case(args.steps, n, 2)
        _kernels.rk4_linear(*a, use_numba=True)  # compile outside the timing
        tp = best_of(lambda: _kernels.rk4_linear(*a, use_numba=False), args.repeat)
        tn = best_of(lambda: _kernels.rk4_linear(*a, use_numba=True), args.repeat)
        print(f"{n:>3} {args.steps:>7} {1e3 * tp:>11.2f} {1e3 * tn:>11.2f} {tp / tn:>7.1f}x")


if __name__ == "__main__":
    main()
