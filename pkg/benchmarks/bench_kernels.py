"""Time the compiled kernels against their pure-numpy bodies.

Run with ``python benchmarks/bench_kernels.py [--repeat R]``. The numpy
path is each dispatcher's ``py_func``; inner kernel calls from it still
hit the compiled versions, so the ``sca_loop`` row understates the gap
to a fully uncompiled run (``RISFL_NUMBA=0``).
"""
import argparse
import time

import numpy as np

from risfl import kernels
from risfl._accel import USE_NUMBA
from risfl.channel import cn, random_phases


def instance(n, N, L, seed=0):
    rng = np.random.default_rng(seed)
    hd = cn((n, N), rng) * 30
    g = cn((n, N, L), rng) * 30
    k2 = rng.integers(100, 2000, n).astype(float) ** 2
    f = cn(N, rng)
    f /= np.linalg.norm(f)
    return hd, g, k2, f, random_phases(L, rng)


def timed(fn, args, repeat):
    fn(*args)  # warm-up / compile
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not USE_NUMBA:
        print("numba disabled (RISFL_NUMBA=0); both columns run the numpy bodies")
    hd, g, k2, f, theta = instance(10, 4, 32)
    a, b, c = kernels.surrogate(hd, g, f, theta, 1.0)
    xi0 = np.full(hd.shape[0], 1.0 / hd.shape[0])
    cases = [
        ("surrogate", kernels.surrogate, (hd, g, f, theta, 1.0)),
        ("solve_dual", kernels.solve_dual, (a, b, c, k2, xi0, 1.0, 500, 1e-9)),
        ("sca_loop", kernels.sca_loop, (hd, g, k2, f, theta, 1.0, 20, 0.0, 1.0, 500, 1e-9, False)),
    ]
    print(f"{'kernel':<12}{'numba [ms]':>12}{'numpy [ms]':>12}{'speed-up':>10}")
    for name, fn, fargs in cases:
        fast = timed(fn, fargs, args.repeat)
        slow = timed(fn.py_func, fargs, max(1, args.repeat // 2))
        print(f"{name:<12}{fast * 1e3:>12.3f}{slow * 1e3:>12.3f}{slow / fast:>10.1f}")


if __name__ == "__main__":
    main()
