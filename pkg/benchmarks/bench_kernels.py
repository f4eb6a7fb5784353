"""Compare the numba and numpy kernels on the energy, its gradient and the distance transform.

Usage: python benchmarks/bench_kernels.py [--n 257] [--repeat 20]

Both backends live in perfora.kernels regardless of PERFORA_BACKEND, so one
process times both and checks that they agree.
"""

import argparse
import time

import numpy as np

from perfora import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=257, help="nodes per side")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    if not kernels.HAVE_NUMBA:
        print("numba not importable; only the numpy path can be timed")
        return
    rng = np.random.default_rng(0)
    U = rng.random((args.n, args.n))
    h = 1.0 / (args.n - 1)
    feature = rng.random((args.n, args.n)) < 0.01
    G = np.empty_like(U)

    # warm up the JIT so compile time is not counted
    kernels._energy_grad_2d(U, h, 3.0, 1e-8, G)
    kernels._energy_2d(U, h, 3.0, 1e-8)
    kernels._edt_sq_numba(feature)

    rows = []
    for p in (2.0, 3.0):
        t_nb = best_of(lambda: kernels._energy_grad_2d(U, h, p, 1e-8, G), args.repeat)
        t_np = best_of(lambda: kernels.energy_grad_numpy(U, h, p, 1e-8), args.repeat)
        e_np, G_np = kernels.energy_grad_numpy(U, h, p, 1e-8)
        e_nb = kernels._energy_grad_2d(U, h, p, 1e-8, G)
        err = max(abs(e_nb - e_np) / abs(e_np), np.abs(G - G_np).max() / np.abs(G_np).max())
        rows.append((f"energy+grad p={p:g}", t_nb, t_np, err))
    t_nb = best_of(lambda: kernels._edt_sq_numba(feature), max(1, args.repeat // 4))
    t_np = best_of(lambda: kernels.edt_sq_numpy(feature), max(1, args.repeat // 4))
    err = np.abs(kernels._edt_sq_numba(feature) - kernels.edt_sq_numpy(feature)).max()
    rows.append(("squared EDT", t_nb, t_np, err))

    print(f"grid {args.n}x{args.n}, best of {args.repeat}")
    print(f"{'kernel':<20} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8} {'max rel diff':>13}")
    for name, a, b, e in rows:
        print(f"{name:<20} {a * 1e3:>10.3f} {b * 1e3:>10.3f} {b / a:>8.1f} {e:>13.2e}")


if __name__ == "__main__":
    main()
