"""Benchmark the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Times the three hot kernels (conv2d, conv_transpose2d, maxpool2d) forward
and backward on shapes representative of the segmentation network, and
verifies that both backends agree before timing.
"""

import argparse
import time

import numpy as np

from grainseg.kernels import numpy_impl

try:
    from grainseg.kernels import numba_impl
except ImportError:
    numba_impl = None

# (label, n, cin, cout, h, w, k, stride, pad)
CASES = [
    ("stem 7x7/2", 4, 3, 64, 256, 256, 7, 2, 3),
    ("enc 3x3/1", 4, 64, 64, 64, 64, 3, 1, 1),
    ("enc 3x3/2", 4, 128, 256, 32, 32, 3, 2, 1),
    ("dec 1x1", 4, 512, 128, 8, 8, 1, 1, 0),
]


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(impl, label, n, cin, cout, h, w, k, stride, pad, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, cin, h, w)).astype(np.float32)
    wt = rng.standard_normal((cout, cin, k, k)).astype(np.float32)
    y = impl.conv2d_forward(x, wt, stride, pad)
    dy = rng.standard_normal(y.shape).astype(np.float32)
    wt_t = rng.standard_normal((cin, cout, k, k)).astype(np.float32)

    rows = {}
    rows["conv2d fwd"] = timeit(lambda: impl.conv2d_forward(x, wt, stride, pad), repeats)
    rows["conv2d dx"] = timeit(lambda: impl.conv2d_dx(dy, wt, stride, pad, h, w), repeats)
    rows["conv2d dw"] = timeit(lambda: impl.conv2d_dw(x, dy, stride, pad, k, k), repeats)
    rows["convt2d fwd"] = timeit(lambda: impl.convt2d_forward(x, wt_t, stride, pad,
                                                              stride - 1), repeats)
    if k > 1:
        out, idx = impl.maxpool2d_forward(x, k, stride, pad)
        dp = np.ones_like(out)
        rows["maxpool fwd"] = timeit(lambda: impl.maxpool2d_forward(x, k, stride, pad),
                                     repeats)
        rows["maxpool bwd"] = timeit(lambda: impl.maxpool2d_backward(dp, idx, h, w),
                                     repeats)
    return rows


def verify_agreement():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 17, 19)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    a = numpy_impl.conv2d_forward(x, w, 2, 1)
    b = numba_impl.conv2d_forward(x, w, 2, 1)
    assert np.allclose(a, b, atol=1e-5), "backends disagree on conv2d"
    wt = rng.standard_normal((3, 4, 3, 3)).astype(np.float32)
    a = numpy_impl.convt2d_forward(x, wt, 2, 1, 1)
    b = numba_impl.convt2d_forward(x, wt, 2, 1, 1)
    assert np.allclose(a, b, atol=1e-5), "backends disagree on convt2d"
    a, ai = numpy_impl.maxpool2d_forward(x, 3, 2, 1)
    b, bi = numba_impl.maxpool2d_forward(x, 3, 2, 1)
    assert np.array_equal(a, b) and np.array_equal(ai, bi), \
        "backends disagree on maxpool2d"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    if numba_impl is None:
        print("numba not importable; nothing to compare")
        return

    verify_agreement()
    print("backends agree on spot checks\n")

    # warm up the jit cache so compilation is not timed
    bench_case(numba_impl, *CASES[0], repeats=1)

    header = f"{'case':<14} {'kernel':<12} {'numpy':>10} {'numba':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for case in CASES:
        np_rows = bench_case(numpy_impl, *case, repeats=args.repeats)
        nb_rows = bench_case(numba_impl, *case, repeats=args.repeats)
        for name in np_rows:
            tn, tb = np_rows[name], nb_rows[name]
            print(f"{case[0]:<14} {name:<12} {tn * 1e3:>8.2f}ms {tb * 1e3:>8.2f}ms "
                  f"{tn / tb:>7.2f}x")


if __name__ == "__main__":
    main()
