"""Benchmark the numba and numpy paths of the hot kernels against each other.

Times conv1d forward/backward and greedy NMS at a few realistic shapes,
checks that both backends agree numerically, and prints a per-shape
speedup table. The JIT warmup call is excluded from the timings.

Usage: python benchmarks/bench_kernels.py [--repeats 20] [--seed 0]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from vilco.kernels import (
    conv1d_backward_nb,
    conv1d_backward_np,
    conv1d_forward_nb,
    conv1d_forward_np,
    conv1d_out_len,
    _nms_jit,
    _nms_np,
)

CONV_SHAPES = [  # (T, D_in, D_out, K)
    (32, 96, 96, 3),
    (128, 96, 96, 3),
    (512, 256, 256, 3),
]
NMS_SIZES = [64, 512, 4096]


def timeit(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_conv(repeats: int, rng: np.random.Generator) -> list[tuple[str, float, float]]:
    rows = []
    for t, d_in, d_out, k in CONV_SHAPES:
        x = rng.normal(size=(t, d_in))
        w = rng.normal(size=(k, d_in, d_out)) / np.sqrt(k * d_in)
        b = rng.normal(size=d_out)
        out_len = conv1d_out_len(t, k, stride=2, padding=1)
        gout = rng.normal(size=(out_len, d_out))

        ref = conv1d_forward_np(x, w, b, 2, 1)
        got = conv1d_forward_nb(x, w, b, 2, 1)  # first call compiles
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-12)
        rows.append((
            f"conv1d fwd  T={t:<4d} D={d_in}x{d_out}",
            timeit(lambda: conv1d_forward_np(x, w, b, 2, 1), repeats),
            timeit(lambda: conv1d_forward_nb(x, w, b, 2, 1), repeats),
        ))

        ref = conv1d_backward_np(gout, x, w, 2, 1)
        got = conv1d_backward_nb(gout, x, w, 2, 1)
        for r, g in zip(ref, got):
            np.testing.assert_allclose(g, r, rtol=1e-10, atol=1e-12)
        rows.append((
            f"conv1d bwd  T={t:<4d} D={d_in}x{d_out}",
            timeit(lambda: conv1d_backward_np(gout, x, w, 2, 1), repeats),
            timeit(lambda: conv1d_backward_nb(gout, x, w, 2, 1), repeats),
        ))
    return rows


def bench_nms(repeats: int, rng: np.random.Generator) -> list[tuple[str, float, float]]:
    rows = []
    for n in NMS_SIZES:
        starts = rng.uniform(0, 100, size=n)
        ends = starts + rng.uniform(0.5, 10, size=n)
        scores = rng.uniform(size=n)
        order = np.argsort(-scores, kind="stable").astype(np.int64)

        ref = _nms_np(starts, ends, order, 0.5)
        got = _nms_jit(starts, ends, order, 0.5)  # first call compiles
        np.testing.assert_array_equal(got, ref)
        rows.append((
            f"greedy NMS  n={n:<5d}",
            timeit(lambda: _nms_np(starts, ends, order, 0.5), repeats),
            timeit(lambda: _nms_jit(starts, ends, order, 0.5), repeats),
        ))
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=20, help="timing repeats, best-of")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    rows = bench_conv(args.repeats, rng) + bench_nms(args.repeats, rng)

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, t_np, t_nb in rows:
        print(
            f"{name:<{width}}  {t_np * 1e6:>8.1f}us  {t_nb * 1e6:>8.1f}us  "
            f"{t_np / t_nb:>7.2f}x"
        )
    print("\nagreement checked with assert_allclose before timing; "
          "set VILCO_NUMBA=0 to run the engine on the numpy path.")


if __name__ == "__main__":
    main()
