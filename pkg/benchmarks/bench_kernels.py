"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --rows 1000000 --repeat 5
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from tiershard import _fallback
from tiershard.simulator import build_alias_table

try:
    from tiershard import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def cases(n: int, seed: int):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal(n)
    tids = rng.integers(0, 4, size=n).astype(np.int64)
    rids = rng.integers(0, 1 << 30, size=n).astype(np.int64)
    hashes = _fallback.hash_rows(tids, rids, 0)
    prob, alias = build_alias_table(rng.random(n // 10) ** 4)
    u = rng.random(n)
    U, W = 32, 8
    rows = n // 10
    tier = rng.integers(0, 3, size=rows).astype(np.int8)
    home = np.where(tier == 2, rng.integers(0, U, size=rows), rng.integers(0, W, size=rows)).astype(np.int64)
    per_gpu = np.full(U, n // U, dtype=np.int64)
    draws = rng.integers(0, rows, size=int(per_gpu.sum())).astype(np.int64)
    return {
        "compensated_cumsum": lambda m: m.compensated_cumsum(values),
        "hash_rows": lambda m: m.hash_rows(tids, rids, 7),
        "reduce_range": lambda m: m.reduce_range(hashes, 32),
        "alias_sample": lambda m: m.alias_sample(u, prob, alias),
        "attribute": lambda m: m.attribute(draws, per_gpu, tier, home, U, W),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"rows={args.rows} repeat={args.repeat} compiled={'yes' if compiled else 'no'}")
    print(f"{'kernel':<20}{'python ms':>12}{'cython ms':>12}{'speedup':>10}  same")
    for name, run in cases(args.rows, args.seed).items():
        py, _ = best_of(lambda: run(_fallback), args.repeat)
        if compiled is None:
            print(f"{name:<20}{1e3 * py:>12.2f}{'-':>12}{'-':>10}")
            continue
        cy, _ = best_of(lambda: run(compiled), args.repeat)
        same = np.array_equal(run(_fallback), run(compiled))
        print(f"{name:<20}{1e3 * py:>12.2f}{1e3 * cy:>12.2f}{py / cy:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
