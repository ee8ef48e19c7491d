"""Timing comparison of the compiled and pure-numpy raster kernels.

Runs each kernel once per backend to warm caches (and trigger JIT
compilation), then reports best-of-N wall times.  The compiled column
needs numba active, so run without ``TERRADAPT_NUMBA=0``.  Usage:

    python3 benchmarks/bench_kernels.py [--n 1290] [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from terradapt import kernels


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1290, help="raster side length")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n = args.n
    cell_px = n / 10.5
    lat = rng.uniform(-1.0, 1.0, (14, 14))
    sites = rng.uniform(0, n - 1, (40, 2))
    labels = rng.integers(0, 10, 40)
    field = rng.standard_normal((n, n))
    xs = rng.uniform(0, n - 1, 20000)
    ys = rng.uniform(0, n - 1, 20000)

    cases = {
        "add_noise_octave": lambda jit: kernels.add_noise_octave(
            np.zeros((n, n)), lat, cell_px, 1.0, jit=jit),
        "voronoi_labels": lambda jit: kernels.voronoi_labels(
            n, sites, labels, jit=jit),
        "bilinear_sample": lambda jit: kernels.bilinear_sample(
            field, xs, ys, jit=jit),
        "rotated_patch": lambda jit: kernels.rotated_patch(
            field, n / 2, n / 2, 0.7, 128, 1.0, jit=jit),
    }

    print(f"raster {n}x{n}, best of {args.repeats}")
    print(f"{'kernel':<20} {'numpy [ms]':>12} {'numba [ms]':>12} {'speedup':>9}")
    for name, fn in cases.items():
        fn(False)
        t_np = best_of(lambda: fn(False), args.repeats)
        if kernels.use_numba():
            fn(True)  # compile outside the timed region
            t_nb = best_of(lambda: fn(True), args.repeats)
            print(f"{name:<20} {t_np * 1e3:12.2f} {t_nb * 1e3:12.2f} "
                  f"{t_np / t_nb:8.1f}x")
        else:
            print(f"{name:<20} {t_np * 1e3:12.2f} {'n/a':>12} {'n/a':>9}")


if __name__ == "__main__":
    main()
