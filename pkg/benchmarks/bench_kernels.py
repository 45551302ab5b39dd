"""Time the numba kernels against their numpy twins at the default workload.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Workload: 500 masks of 112x112, 8 patches of 28 px each.
"""

import argparse
import time

import numpy as np

from corrrise import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return min(times), result


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--masks", type=int, default=500)
    ap.add_argument("--size", type=int, default=112)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n, h = args.masks, args.size
    patch = max(1, round(28 * h / 112))
    rows = rng.integers(0, h - patch + 1, (n, 8))
    cols = rng.integers(0, h - patch + 1, (n, 8))
    values = rng.random((n, 8))
    masks = _kernels.rasterize_patches_numpy(rows, cols, values, patch, h, h).reshape(n, -1)
    scores = rng.random(n)

    cases = {
        "pixel_pearson": (lambda: _kernels.pixel_pearson_numpy(masks, scores),
                          _kernels.pixel_pearson_numba and (lambda: _kernels.pixel_pearson_numba(masks, scores))),
        "rasterize": (lambda: _kernels.rasterize_patches_numpy(rows, cols, values, patch, h, h),
                      _kernels.rasterize_patches_numba
                      and (lambda: _kernels.rasterize_patches_numba(rows, cols, values, patch, h, h))),
    }
    print(f"workload: {n} masks, {h}x{h}, patch {patch}; best of {args.repeat}")
    print(f"{'kernel':<14} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max diff':>10}")
    for name, (np_fn, nb_fn) in cases.items():
        t_np, r_np = best_of(np_fn, args.repeat)
        if nb_fn is None:
            print(f"{name:<14} {t_np * 1e3:>10.2f} {'n/a':>10} {'':>8} {'':>10}")
            continue
        nb_fn()  # compile outside the timed runs
        t_nb, r_nb = best_of(nb_fn, args.repeat)
        diff = float(np.max(np.abs(np.asarray(r_np) - np.asarray(r_nb))))
        print(f"{name:<14} {t_np * 1e3:>10.2f} {t_nb * 1e3:>10.2f} {t_np / t_nb:>7.1f}x {diff:>10.1e}")


if __name__ == "__main__":
    main()
