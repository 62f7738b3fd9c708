"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--N 200] [--m 6] [--p 5] [--K 8] [--repeat 5]

Prints one line per kernel with the best-of-repeat time of each backend and
the speed-up; also checks that both backends agree.
"""

import argparse
import timeit

import numpy as np

from varclust import kernels


def make_inputs(N, m, p, K, T, seed=0):
    rng = np.random.default_rng(seed)
    q = 1 + m * p
    R = np.triu(rng.standard_normal((N, q, q)))
    yq = rng.standard_normal((N, q, m))
    A = rng.standard_normal((N, m, m))
    S = A @ np.transpose(A, (0, 2, 1))
    B = rng.standard_normal((K, q, m))
    Linv = np.tril(rng.standard_normal((K, m, m))) + m * np.eye(m)
    w = rng.uniform(size=N)
    lags = 0.1 * rng.standard_normal((p, m, m))
    noise = rng.standard_normal((T, m))
    return R, yq, S, B, Linv, w, lags, noise


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=200)
    ap.add_argument("--m", type=int, default=6)
    ap.add_argument("--p", type=int, default=5)
    ap.add_argument("--K", type=int, default=8)
    ap.add_argument("--T", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    if not kernels.HAVE_COMPILED:
        print("compiled kernels are not built; only the python backend is available")
    R, yq, S, B, Linv, w, lags, noise = make_inputs(args.N, args.m, args.p, args.K, args.T)
    c = np.zeros(args.m)
    jobs = {
        "psi_grid": lambda b: kernels.psi_grid(R, yq, S, B, Linv, backend=b),
        "weighted_gram": lambda b: kernels.weighted_gram(R, yq, S, B[0], w, backend=b),
        "var_recursion": lambda b: kernels.var_recursion(c, lags, noise, backend=b),
    }
    backends = ["python"] + (["cython"] if kernels.HAVE_COMPILED else [])
    print(f"N={args.N} m={args.m} p={args.p} K={args.K} T={args.T}")
    print(f"{'kernel':<15}" + "".join(f"{b:>12}" for b in backends) + ("   speed-up" if len(backends) > 1 else ""))
    for name, fn in jobs.items():
        times = {}
        for b in backends:
            reps = max(1, int(0.2 / max(timeit.timeit(lambda: fn(b), number=1), 1e-6)))
            times[b] = min(timeit.repeat(lambda: fn(b), number=reps, repeat=args.repeat)) / reps
        line = f"{name:<15}" + "".join(f"{times[b] * 1e3:>10.3f}ms" for b in backends)
        if len(backends) > 1:
            diff = np.max(np.abs(fn("python") - fn("cython")) / (np.abs(fn("python")).max() + 1e-300))
            line += f"   {times['python'] / times['cython']:7.1f}x  (max rel diff {diff:.1e})"
        print(line)


if __name__ == "__main__":
    main()
