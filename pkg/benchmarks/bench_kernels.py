"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call (compilation, or loading the on-disk cache) is excluded.
"""

import argparse
import timeit

import numpy as np

from entirespace import _accel


def cases(rng):
    feats = [f"i_cat={i % 97}".encode() for i in range(20_000)]
    scores = np.round(rng.normal(size=200_000), 2)
    labels = rng.integers(0, 2, 200_000)
    idx = rng.integers(0, 4096, 100_000)
    rows = rng.normal(size=(100_000, 16))
    return {
        "fnv1a64 x20k": (
            lambda: [_accel.fnv1a64(f) for f in feats],
            lambda: [_accel.fnv1a64_np(f) for f in feats],
        ),
        "rank_sum_auc n=200k": (
            lambda: _accel.rank_sum_auc(scores, labels),
            lambda: _accel.rank_sum_auc_np(scores, labels),
        ),
        "scatter_add_rows 100k x 16": (
            lambda: _accel.scatter_add_rows(np.zeros((4096, 16)), idx, rows),
            lambda: _accel.scatter_add_rows_np(np.zeros((4096, 16)), idx, rows),
        ),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba path unavailable (ENTIRESPACE_DISABLE_JIT set or numba missing)")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, (fast, slow) in cases(rng).items():
        fast()  # warm up
        t_fast = min(timeit.repeat(fast, number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(slow, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<28}{t_fast:>10.2f}{t_slow:>10.2f}{t_slow / t_fast:>8.1f}x")


if __name__ == "__main__":
    main()
