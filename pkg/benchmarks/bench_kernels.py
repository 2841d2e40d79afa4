"""Benchmark the compiled convolution kernels against the numpy fallback.

Runs forward, grad_input and grad_weight at a few batch sizes and prints a
table of per-call times plus the max absolute disagreement between the two
backends. The compiled path tends to win at small batches (per-call overhead
and padding passes dominate the fallback there); the BLAS-backed fallback
catches up once the batch is large enough to amortize its nine shifted
matmuls.

Usage: python3 benchmarks/bench_kernels.py [--reps N] [--image-size H]
"""

import argparse
import time

import numpy as np

from dpltta._kernels import conv_numpy

try:
    from dpltta._kernels import _convolve
except ImportError:
    _convolve = None

SHAPES = [
    # (batch, c_in, c_out) at the bundled model's two conv blocks
    (2, 3, 8),
    (2, 8, 16),
    (32, 3, 8),
    (32, 8, 16),
    (128, 8, 16),
]


def _time(fn, args, reps):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps * 1e3


def run(reps, image_size):
    rng = np.random.default_rng(0)
    backends = [("numpy", conv_numpy)]
    if _convolve is not None:
        backends.insert(0, ("cython", _convolve))
    else:
        print("compiled extension not available; timing numpy fallback only")

    header = f"{'shape':>18} {'op':>11}"
    for name, _ in backends:
        header += f" {name + ' ms':>10}"
    if len(backends) == 2:
        header += f" {'ratio':>7} {'max err':>9}"
    print(header)

    for batch, c_in, c_out in SHAPES:
        x = rng.standard_normal((batch, c_in, image_size, image_size))
        w = rng.standard_normal((c_out, c_in, 3, 3))
        gy = rng.standard_normal((batch, c_out, image_size, image_size))
        ops = [
            ("forward", "conv2d_forward", (x, w, 1)),
            ("grad_input", "conv2d_grad_input", (w, gy, 1, image_size, image_size)),
            ("grad_weight", "conv2d_grad_weight", (x, gy, 1, 3, 3)),
        ]
        for op_name, attr, args in ops:
            times = [_time(getattr(mod, attr), args, reps) for _, mod in backends]
            row = f"{batch:>4}x{c_in}->{c_out:<8} {op_name:>11}"
            for t in times:
                row += f" {t:>10.3f}"
            if len(backends) == 2:
                ref = getattr(backends[1][1], attr)(*args)
                got = getattr(backends[0][1], attr)(*args)
                row += f" {times[1] / times[0]:>6.2f}x {np.abs(got - ref).max():>9.1e}"
            print(row)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=30)
    ap.add_argument("--image-size", type=int, default=24)
    args = ap.parse_args()
    run(args.reps, args.image_size)


if __name__ == "__main__":
    main()
