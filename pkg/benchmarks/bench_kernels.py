"""Time the numba and numpy triplet kernels on the same inputs.

Run with ``python benchmarks/bench_kernels.py [--triplets 6000 60000]``.
Each kernel is warmed up once (numba compiles on first call), then timed
as the best of ``--repeats`` runs. Results of both backends are checked
to agree before timing is reported.
"""

import argparse
import time

import numpy as np

from jointmetric import kernels


def best_time(fn, repeats):
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def inputs(n_obj, dim, n_trip, seed=0):
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((n_obj, dim)) / np.sqrt(dim)
    A = rng.standard_normal((dim, dim))
    M = A @ A.T / dim
    trip = np.empty((n_trip, 3), dtype=np.int64)
    for r in range(n_trip):
        trip[r] = rng.choice(n_obj, 3, replace=False)
    return Y, M, trip


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--objects", type=int, default=200)
    ap.add_argument("--dim", type=int, default=10)
    ap.add_argument("--triplets", type=int, nargs="+", default=[600, 6000, 60000])
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    cases = {
        "hinge_loss": lambda Y, M, S: kernels.hinge_loss(Y, M, S),
        "hinge_grad_M": lambda Y, M, S: kernels.hinge_grad_M(Y, M, S)[1],
        "hinge_grad_Y": lambda Y, M, S: kernels.hinge_grad_Y(Y, M, S)[1],
        "coord_grad_M": lambda Y, M, S: kernels.coord_hinge_grad_M(Y @ Y.T, S)[1],
    }
    print(f"{'kernel':<14}{'triplets':>10}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for n in args.triplets:
        Y, M, S = inputs(args.objects, args.dim, n)
        for name, fn in cases.items():
            with kernels.use_backend("numpy"):
                ref = fn(Y, M, S)
                t_np = best_time(lambda: fn(Y, M, S), args.repeats)
            with kernels.use_backend("numba"):
                got = fn(Y, M, S)
                t_nb = best_time(lambda: fn(Y, M, S), args.repeats)
            if not np.allclose(ref, got, rtol=1e-10, atol=1e-10):
                raise SystemExit(f"{name}: backends disagree")
            print(f"{name:<14}{n:>10}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
