"""Benchmark the compiled matching kernels against the pure-Python fallback.

Run:  python3 benchmarks/bench_matching.py [--sizes 10,30,60] [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from setgen._kernels import matching_py

try:
    from setgen._kernels import matching_cy
except ImportError:
    matching_cy = None


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="10,30,60,100")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(0)

    if matching_cy is None:
        print("compiled backend unavailable; showing pure Python only")

    header = f"{'kernel':<18}{'n':>6}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for n in sizes:
        cost = rng.random((n, n))
        rect = rng.random((n, max(2, n // 2)))
        supply = np.full(n, rect.shape[1], dtype=np.int64)
        demand = np.full(rect.shape[1], n, dtype=np.int64)

        rows = [("solve_assignment",
                 lambda m: m.solve_assignment(cost)),
                ("solve_transport",
                 lambda m: m.solve_transport(rect, supply, demand))]
        for name, call in rows:
            t_py = _time(lambda: call(matching_py), args.repeats)
            if matching_cy is not None:
                t_cy = _time(lambda: call(matching_cy), args.repeats)
                # sanity: identical outputs
                a, b = call(matching_py), call(matching_cy)
                assert np.allclose(a[1], b[1]), (name, n)
                print(f"{name:<18}{n:>6}{t_py * 1e3:>14.3f}"
                      f"{t_cy * 1e3:>14.3f}{t_py / t_cy:>10.1f}x")
            else:
                print(f"{name:<18}{n:>6}{t_py * 1e3:>14.3f}{'-':>14}{'-':>10}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
