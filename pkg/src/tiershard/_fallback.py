"""Pure-Python/numpy versions of the compiled kernels.

Used when the extension is not built or when ``TIERSHARD_PURE_PYTHON=1``.
Results are identical to ``_kernels`` bit for bit.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
SEED_STEP = np.uint64(0xD1B54A32D192ED03)
_LOW32 = np.uint64(0xFFFFFFFF)


def compensated_cumsum(values: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values, dtype=np.float64)
    out = np.empty(values.shape[0] + 1, dtype=np.float64)
    out[0] = 0.0
    s = 0.0
    c = 0.0
    for i, x in enumerate(values.tolist()):
        t = s + x
        bp = t - s
        c += (s - (t - bp)) + (x - bp)
        s = t
        out[i + 1] = s + c
    return out


def hash_rows(table_ids: np.ndarray, row_ids: np.ndarray, seed: int) -> np.ndarray:
    t = np.asarray(table_ids, dtype=np.int64).astype(np.uint64)
    r = np.asarray(row_ids, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        offset = np.uint64(seed) * SEED_STEP
        return ((t << np.uint64(40)) + r + offset) * GOLDEN


def reduce_range(hashes: np.ndarray, buckets: int) -> np.ndarray:
    h = np.asarray(hashes, dtype=np.uint64)
    b = np.uint64(buckets)
    hi = (h >> np.uint64(32)) * b
    lo = ((h & _LOW32) * b) >> np.uint64(32)
    return ((hi + lo) >> np.uint64(32)).astype(np.int64)


def alias_sample(uniforms: np.ndarray, prob: np.ndarray, alias: np.ndarray) -> np.ndarray:
    n = prob.shape[0]
    u = np.asarray(uniforms, dtype=np.float64) * n
    k = np.minimum(u.astype(np.int64), n - 1)
    return np.where(u - k < prob[k], k, alias[k])


def attribute(draws, per_gpu, tier, home, num_gpus: int, gpus_per_node: int) -> np.ndarray:
    draws = np.asarray(draws, dtype=np.int64)
    gpu = np.repeat(np.arange(num_gpus, dtype=np.int64), np.asarray(per_gpu, dtype=np.int64))
    t = np.asarray(tier)[draws]
    h = np.asarray(home)[draws]
    out = np.zeros((6, num_gpus), dtype=np.int64)

    rw = t == 2
    out[0] = np.bincount(gpu[rw], minlength=num_gpus)
    out[1] = np.bincount(h[rw], minlength=num_gpus)

    fx = t == 1
    fx_owner = (gpu[fx] // gpus_per_node) * gpus_per_node + h[fx]
    out[2] = np.bincount(gpu[fx], minlength=num_gpus)
    out[3] = np.bincount(fx_owner, minlength=num_gpus)

    dp = t == 0
    out[4] = np.bincount(gpu[dp], minlength=num_gpus)
    out[5] = out[1] + out[3] + out[4]
    return out
