#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-numpy fallback.

Run: python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from mqbank._kernels import _pure

try:
    from mqbank._kernels import _core
except ImportError:
    _core = None

RNG = np.random.default_rng(0)


def timeit(fn, *args, repeats=30):
    fn(*args)  # warmup
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    # sizes mirror one desk-scale training step (50 queries x 10 points)
    grid = RNG.normal(size=(101, 51, 64))
    pts_a = RNG.uniform(-40, 40, size=(100, 2))
    pts_b = RNG.uniform(-40, 40, size=(100, 2))
    gx = RNG.uniform(0, 100, size=500)
    gy = RNG.uniform(0, 50, size=500)
    gout = RNG.normal(size=(500, 64))
    u = RNG.integers(0, 101, size=500)
    v = RNG.integers(0, 51, size=500)
    buf = np.zeros_like(grid)
    pred = RNG.uniform(-40, 40, size=(50, 10, 2))
    gt = RNG.uniform(-40, 40, size=(10, 10, 2))
    closed = RNG.uniform(size=10) < 0.3

    yield "nearest_dists 100x100", ("nearest_dists", (pts_a, pts_b))
    yield "bilinear_forward 500", ("bilinear_forward", (grid, gx, gy))
    yield "bilinear_backward 500", ("bilinear_backward", (grid, gx, gy, gout))
    yield "gather_cells 500", ("gather_cells", (grid, u, v))
    yield "scatter_add_cells 500", ("scatter_add_cells", (buf, u, v, gout))
    yield "neighborhood_gather k=3", ("neighborhood_gather", (grid, u, v, 3))
    yield "equal_points_costs 50x10", ("equal_points_costs", (pred, gt, closed))


def main():
    if _core is None:
        print("compiled core not built; showing pure-numpy timings only")
    print(f"{'kernel':28s} {'pure':>10s} {'compiled':>10s} {'speedup':>8s}")
    for label, (name, args) in cases():
        t_pure = timeit(getattr(_pure, name), *args)
        if _core is not None:
            t_core = timeit(getattr(_core, name), *args)
            print(f"{label:28s} {t_pure * 1e6:9.1f}u {t_core * 1e6:9.1f}u "
                  f"{t_pure / t_core:7.1f}x")
        else:
            print(f"{label:28s} {t_pure * 1e6:9.1f}u {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
