"""Kernel backend selection.

The compiled ``_kernels`` extension is used when importable; otherwise the
numpy fallback. Set ``TIERSHARD_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("TIERSHARD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def compensated_cumsum(values):
    """Prefix sums ``out[k] = sum(values[:k])`` with error compensation."""
    return _impl.compensated_cumsum(np.ascontiguousarray(values, dtype=np.float64))


def hash_rows(table_ids, row_ids, seed: int = 0):
    """64-bit Fibonacci multiplicative hash of ``(table_id << 40) + row_id + seed step``."""
    return _impl.hash_rows(
        np.ascontiguousarray(table_ids, dtype=np.int64),
        np.ascontiguousarray(row_ids, dtype=np.int64),
        int(seed) & 0xFFFFFFFFFFFFFFFF,
    )


def reduce_range(hashes, buckets: int):
    """Map 64-bit hashes to ``[0, buckets)`` by multiply-high (uses the top bits)."""
    if not 1 <= buckets < 2**32:
        raise ValueError("buckets must be in [1, 2**32)")
    return _impl.reduce_range(np.ascontiguousarray(hashes, dtype=np.uint64), buckets)


def alias_sample(uniforms, prob, alias):
    return _impl.alias_sample(
        np.ascontiguousarray(uniforms, dtype=np.float64),
        np.ascontiguousarray(prob, dtype=np.float64),
        np.ascontiguousarray(alias, dtype=np.int64),
    )


def attribute(draws, per_gpu, tier, home, num_gpus: int, gpus_per_node: int):
    return _impl.attribute(
        np.ascontiguousarray(draws, dtype=np.int64),
        np.ascontiguousarray(per_gpu, dtype=np.int64),
        np.ascontiguousarray(tier, dtype=np.int8),
        np.ascontiguousarray(home, dtype=np.int64),
        int(num_gpus),
        int(gpus_per_node),
    )
