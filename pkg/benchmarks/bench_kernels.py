#!/usr/bin/env python
"""Benchmark the numba kernels against their numpy fallbacks.

Times im2col/col2im, the full 3x3 convolution forward and backward passes, and
bilinear rotation on decoder-sized tensors, and checks that both backends agree
bit for bit.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --repeats 20 --size 64
"""
import argparse
import time

import numpy as np

from scatterdense import kernels
from scatterdense._accel import NUMBA_AVAILABLE


def best_of(fn, repeats):
    fn()  # warm-up (triggers JIT compilation for numba)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(size, rng):
    x = rng.standard_normal((4, 16, size, size))
    w_up = rng.standard_normal((32, 16, 3, 3))
    w_down = rng.standard_normal((8, 16, 3, 3))
    b32, b8 = np.zeros(32), np.zeros(8)
    cols = kernels.im2col3x3(x, "numpy")
    img = rng.random((size, size))
    g_up = rng.standard_normal((4, 32, size, size))
    g_down = rng.standard_normal((4, 8, size, size))

    def conv_bwd(w, b, g, backend):
        _, ctx = kernels.conv3x3_forward(x, w, b, backend)
        return kernels.conv3x3_backward(g, ctx, w, backend=backend)

    return {
        "im2col3x3": lambda be: kernels.im2col3x3(x, be),
        "col2im3x3": lambda be: kernels.col2im3x3(cols, x.shape, be),
        "conv fwd 16->32 (in)": lambda be: kernels.conv3x3_forward(x, w_up, b32, be)[0],
        "conv fwd 16->8 (out)": lambda be: kernels.conv3x3_forward(x, w_down, b8, be)[0],
        "conv fwd+bwd 16->32": lambda be: conv_bwd(w_up, b32, g_up, be),
        "conv fwd+bwd 16->8": lambda be: conv_bwd(w_down, b8, g_down, be),
        "rotate_bilinear": lambda be: kernels.rotate_bilinear(img, 7.5, be),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(u, v) for u, v in zip(a, b))
    return np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=32, help="spatial extent (default 32, the training patch)")
    ap.add_argument("--repeats", type=int, default=10)
    args = ap.parse_args()
    if not NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  identical")
    for name, fn in cases(args.size, rng).items():
        t_np = best_of(lambda: fn("numpy"), args.repeats)
        t_nb = best_of(lambda: fn("numba"), args.repeats)
        print(f"{name:<24}{1e3 * t_np:>10.3f}{1e3 * t_nb:>10.3f}{t_np / t_nb:>8.2f}x  {same(fn('numpy'), fn('numba'))}")


if __name__ == "__main__":
    main()
