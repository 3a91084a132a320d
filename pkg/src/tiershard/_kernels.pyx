# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Semantics must match ``tiershard._fallback`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, int8_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t SEED_STEP = 0xD1B54A32D192ED03ULL


def compensated_cumsum(const double[::1] values):
    """Running sums with a second-order error term (TwoSum accumulation).

    ``out[0] == 0`` and ``out[k]`` is the sum of ``values[:k]``.
    """
    cdef Py_ssize_t n = values.shape[0], i
    out = np.empty(n + 1, dtype=np.float64)
    cdef double[::1] o = out
    cdef double s = 0.0, c = 0.0, x, t, bp, err
    o[0] = 0.0
    with nogil:
        for i in range(n):
            x = values[i]
            t = s + x
            bp = t - s
            err = (s - (t - bp)) + (x - bp)
            s = t
            c = c + err
            o[i + 1] = s + c
    return out


def hash_rows(const int64_t[::1] table_ids, const int64_t[::1] row_ids, uint64_t seed):
    cdef Py_ssize_t n = row_ids.shape[0], i
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef uint64_t offset = seed * SEED_STEP
    with nogil:
        for i in range(n):
            o[i] = ((<uint64_t>table_ids[i] << 40) + <uint64_t>row_ids[i] + offset) * GOLDEN
    return out


def reduce_range(const uint64_t[::1] hashes, uint64_t buckets):
    cdef Py_ssize_t n = hashes.shape[0], i
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] o = out
    cdef uint64_t h
    with nogil:
        for i in range(n):
            h = hashes[i]
            o[i] = <int64_t>(((h >> 32) * buckets + (((h & 0xFFFFFFFFULL) * buckets) >> 32)) >> 32)
    return out


def alias_sample(const double[::1] uniforms, const double[::1] prob, const int64_t[::1] alias):
    cdef Py_ssize_t m = uniforms.shape[0], n = prob.shape[0], i
    out = np.empty(m, dtype=np.int64)
    cdef int64_t[::1] o = out
    cdef double u
    cdef int64_t k
    with nogil:
        for i in range(m):
            u = uniforms[i] * n
            k = <int64_t>u
            if k >= n:
                k = n - 1
            if u - k < prob[k]:
                o[i] = k
            else:
                o[i] = alias[k]
    return out


def attribute(const int64_t[::1] draws, const int64_t[::1] per_gpu,
              const int8_t[::1] tier, const int64_t[::1] home,
              Py_ssize_t num_gpus, Py_ssize_t gpus_per_node):
    """Per-GPU occurrence tallies for one iteration.

    Returns an int64 array of shape (6, num_gpus) with rows
    rw_recv, rw_send, flex_recv, flex_send, dp_local, served.
    """
    out = np.zeros((6, num_gpus), dtype=np.int64)
    cdef int64_t[:, ::1] o = out
    cdef Py_ssize_t g, j, pos = 0, stop, owner
    cdef int64_t r
    with nogil:
        for g in range(num_gpus):
            stop = pos + per_gpu[g]
            for j in range(pos, stop):
                r = draws[j]
                if tier[r] == 2:
                    owner = home[r]
                    o[0, g] += 1
                    o[1, owner] += 1
                    o[5, owner] += 1
                elif tier[r] == 1:
                    owner = (g // gpus_per_node) * gpus_per_node + home[r]
                    o[2, g] += 1
                    o[3, owner] += 1
                    o[5, owner] += 1
                else:
                    o[4, g] += 1
                    o[5, g] += 1
            pos = stop
    return out
