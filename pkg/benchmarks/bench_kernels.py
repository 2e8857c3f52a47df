"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 200 800]

Both paths are imported directly, so the ``PILLARMKL_NO_NUMBA`` flag does
not matter here. Each numba function is called once before timing to
exclude compilation.
"""
import argparse
import timeit

import numpy as np

from pillarmkl import fisher, kernels, svm


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def cases(n, rng):
    x = rng.standard_normal((n, 64))
    yield "sqdist (n x n, d=64)", kernels._sqdist_numba, kernels._sqdist_numpy, (x, x, True)

    xs = rng.standard_normal((n, 8))
    K = kernels.kernel_gram(xs, xs, kernels.KernelParams("rbf", kernels.gamma_heuristic(xs)))
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)[rng.permutation(n)]
    yield "smo (C=100, tol=1e-3)", svm._smo_numba, svm._smo_numpy, (K, y, 100.0, 1e-3, 10**7)

    X = rng.standard_normal((20 * n, 32))
    mu = rng.standard_normal((64, 32))
    var = rng.uniform(0.5, 2.0, (64, 32))
    yield "gmm log-density (K=64, D=32)", fisher._log_gauss_numba, fisher._log_gauss_numpy, \
        (X, mu, var)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[200, 800])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':32s} {'n':>6s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for n in args.n:
        for name, fast, slow, fn_args in cases(n, rng):
            fast(*fn_args)
            t_fast = best_of(lambda: fast(*fn_args), args.repeat)
            t_slow = best_of(lambda: slow(*fn_args), args.repeat)
            print(f"{name:32s} {n:6d} {1e3 * t_fast:10.2f} {1e3 * t_slow:10.2f} "
                  f"{t_slow / t_fast:7.1f}x")


if __name__ == "__main__":
    main()
