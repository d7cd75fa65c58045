#!/usr/bin/env python3
"""Benchmark the GF(2^8) kernels: numba @njit versus the pure-numpy fallback.

The three kernels measured here (byte-wise polynomial evaluation, Lagrange
interpolation at zero, Neville interpolation at zero) are the hot inner
loops behind key splitting and reconstruction. Run with KARY_PURE_NUMPY=1
to confirm the fallback is selected as the active backend; this script
always times both paths directly when numba is importable.

Usage: python benchmarks/bench_gf256.py [--repeat N]
"""

import argparse
import random
import time

import numpy as np

from karychain import gf256


def time_kernel(fn, args_iter, repeat: int) -> float:
    start = time.perf_counter()
    for args in args_iter:
        fn(*args)
    elapsed = time.perf_counter() - start
    return elapsed / repeat


def build_workloads(repeat: int):
    rng = random.Random(1)
    split_args = []
    interp_args = []
    for _ in range(repeat):
        coeffs = (
            np.frombuffer(rng.randbytes(32 * 8), dtype=np.uint8).reshape(32, 8).copy()
        )
        split_args.append((coeffs, rng.randint(1, 255)))
        xs = np.array(rng.sample(range(1, 256), 8), dtype=np.uint8)
        ys = np.frombuffer(rng.randbytes(8 * 32), dtype=np.uint8).reshape(8, 32).copy()
        interp_args.append((xs, ys))
    return split_args, interp_args


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=20000,
                        help="iterations per kernel (default 20000)")
    args = parser.parse_args()

    split_args, interp_args = build_workloads(args.repeat)
    kernels = [
        ("eval_polys (32B secret, t=8)", gf256.eval_polys_numpy, gf256.eval_polys_jit,
         split_args),
        ("lagrange_zero (8 shares, 32B)", gf256.lagrange_zero_numpy, gf256.lagrange_zero_jit,
         interp_args),
        ("neville_zero (8 shares, 32B)", gf256.neville_zero_numpy, gf256.neville_zero_jit,
         interp_args),
    ]

    print(f"active backend: {gf256.BACKEND}   iterations per kernel: {args.repeat}")
    header = f"{'kernel':<32} {'numpy us/call':>14} {'numba us/call':>14} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, numpy_fn, jit_fn, workload in kernels:
        t_numpy = time_kernel(numpy_fn, workload, args.repeat) * 1e6
        if jit_fn is None:
            print(f"{name:<32} {t_numpy:>14.2f} {'unavailable':>14} {'-':>9}")
            continue
        jit_fn(*workload[0])  # compile outside the timed region
        t_jit = time_kernel(jit_fn, workload, args.repeat) * 1e6
        print(f"{name:<32} {t_numpy:>14.2f} {t_jit:>14.2f} {t_numpy / t_jit:>8.1f}x")

    # sanity: both paths agree on one workload element
    xs, ys = interp_args[0]
    if gf256.neville_zero_jit is not None:
        assert np.array_equal(
            gf256.neville_zero_numpy(xs, ys.copy()), gf256.neville_zero_jit(xs, ys.copy())
        )
        print("paths agree on spot-check inputs")


if __name__ == "__main__":
    main()
