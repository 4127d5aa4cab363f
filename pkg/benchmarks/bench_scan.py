#!/usr/bin/env python3
"""Benchmark the selective-scan kernels: compiled extension vs numpy fallback.

Runs forward and backward at several sequence lengths and prints a timing
table plus the numerical agreement between the two backends. Shapes mirror
the stage-2 workload of the segmentation nets.

Usage: python3 benchmarks/bench_scan.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from mambaseg._kernels import scan_numpy

try:
    from mambaseg._kernels import _scan_cy
except ImportError:
    _scan_cy = None


def make_inputs(bsz, length, dim, n_state, dtype, seed=0):
    rng = np.random.default_rng(seed)

    def draw(*shape):
        return rng.standard_normal(shape).astype(dtype)

    x = draw(bsz, length, dim)
    delta = np.abs(draw(bsz, length, dim)) * 0.05 + 0.001
    a = -np.abs(draw(dim, n_state)) - 0.5
    b_seq = draw(bsz, length, n_state)
    c_seq = draw(bsz, length, n_state)
    d_skip = draw(dim)
    return x, delta, a, b_seq, c_seq, d_skip


def time_backend(mod, args, repeats):
    y, h = mod.scan_forward(*args)
    gy = np.ones_like(y)
    fwd = []
    bwd = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        y, h = mod.scan_forward(*args)
        fwd.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        mod.scan_backward(gy, *args, h)
        bwd.append(time.perf_counter() - t0)
    return min(fwd), min(bwd), y


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    opts = parser.parse_args()

    print(f"{'shape B,L,D,S':>22} {'numpy fwd':>10} {'numpy bwd':>10} "
          f"{'cython fwd':>11} {'cython bwd':>11} {'speedup':>8} {'max rel diff':>13}")
    for bsz, length, dim, n_state in [(8, 256, 16, 16), (8, 1024, 16, 16),
                                      (8, 4096, 16, 16), (2, 4096, 64, 16)]:
        args = make_inputs(bsz, length, dim, n_state, np.float32)
        np_fwd, np_bwd, y_np = time_backend(scan_numpy, args, opts.repeats)
        if _scan_cy is None:
            print(f"{bsz},{length},{dim},{n_state:>4}  numpy {np_fwd*1e3:8.2f}ms "
                  f"{np_bwd*1e3:8.2f}ms   (extension not built)")
            continue
        cy_fwd, cy_bwd, y_cy = time_backend(_scan_cy, args, opts.repeats)
        denom = np.maximum(np.abs(y_np), 1e-6)
        rel = float(np.max(np.abs(y_np - y_cy) / denom))
        speedup = (np_fwd + np_bwd) / (cy_fwd + cy_bwd)
        print(f"{bsz:>6},{length:>5},{dim:>3},{n_state:>3} "
              f"{np_fwd*1e3:>9.2f}m {np_bwd*1e3:>9.2f}m "
              f"{cy_fwd*1e3:>10.2f}m {cy_bwd*1e3:>10.2f}m "
              f"{speedup:>7.2f}x {rel:>13.2e}")


if __name__ == "__main__":
    main()
