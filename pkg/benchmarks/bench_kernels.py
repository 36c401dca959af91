"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The first numba call of each kernel compiles (or loads from the on-disk cache);
it is reported separately and excluded from the steady-state timings.
"""

import argparse
import time

import numpy as np

from usejudge import _kernels


def _cases(rng):
    n = 200_000
    gold = rng.integers(1, 5, n)
    pred = rng.integers(1, 5, n)
    ranks_x = rng.integers(1, 6, 50_000).astype(float)
    gains = rng.integers(0, 4, (20_000, 10)).astype(float)
    counts = rng.integers(0, 11, 20_000).astype(np.int64)
    X = rng.normal(size=(400, 30))
    y = rng.integers(0, 5, 400)
    Xh = rng.normal(size=(100, 30))
    yh = rng.integers(0, 5, 100)
    return {
        "confusion_matrix": (gold, pred, 4),
        "average_ranks": (ranks_x,),
        "click_metrics_batch": (gains, counts),
        "softmax_gd": (X, y, 5, Xh, yh, 0.1, 0.1, 2000, 1e-7, 200),
    }


def _time(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cases = _cases(np.random.default_rng(args.seed))
    fast = _kernels.get("numba")
    slow = _kernels.get("numpy")
    if fast is slow:
        print("numba not installed; only the numpy path is available")
    print(f"{'kernel':<22}{'numpy s':>12}{'numba s':>12}{'speedup':>10}{'compile s':>12}")
    for name, cargs in cases.items():
        t0 = time.perf_counter()
        getattr(fast, name)(*cargs)
        warm = time.perf_counter() - t0
        t_np = _time(getattr(slow, name), cargs, args.repeat)
        t_nb = _time(getattr(fast, name), cargs, args.repeat)
        print(f"{name:<22}{t_np:>12.5f}{t_nb:>12.5f}{t_np / t_nb:>10.1f}{warm:>12.3f}")


if __name__ == "__main__":
    main()
