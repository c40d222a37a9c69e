"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeats 20]

Both paths are imported from ``condlk.kernels`` directly, so one process
covers both; ``CONDLK_DISABLE_NUMBA=1`` only affects which one the package
dispatches to.  Outputs are checked for equality before timing.
"""
import argparse
import time

import numpy as np

from condlk import kernels
from condlk._accel import HAS_NUMBA


def best_of(fn, args, repeats):
    fn(*args)                          # warm-up (includes JIT compilation)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--size", type=int, default=256)
    args = ap.parse_args()
    if not HAS_NUMBA:
        print("numba not available (or disabled); only the numpy path can be timed")
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(args.size, args.size))
    stack = rng.uniform(size=(args.size, args.size, 8))
    # one batch of 64 trials on a 20x20 grid, the harness's chunk size
    xs = rng.uniform(0, args.size - 1, size=64 * 400)
    ys = rng.uniform(0, args.size - 1, size=64 * 400)

    cases = [
        ("bilinear (8 ch, 25600 pts)", kernels.bilinear_np, kernels.bilinear_nb, (stack, xs, ys), (stack, xs, ys)),
        ("box3", kernels.box3_np, kernels.box3_nb, (img,), (img,)),
        ("lbp_compare", kernels.lbp_compare_np, kernels.lbp_compare_nb, (img,), (img, kernels.LBP_OFFSETS)),
    ]
    print(f"{'kernel':<28} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  max|diff|")
    for name, f_np, f_nb, a_np, a_nb in cases:
        t_np = best_of(f_np, a_np, args.repeats)
        if HAS_NUMBA:
            diff = float(np.max(np.abs(f_np(*a_np) - f_nb(*a_nb))))
            t_nb = best_of(f_nb, a_nb, args.repeats)
            print(f"{name:<28} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.2f}  {diff:.1e}")
        else:
            print(f"{name:<28} {t_np * 1e3:10.3f} {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
