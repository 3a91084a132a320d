"""Per-row value-frequency distributions.

A :class:`RowDistribution` holds the nonzero rows of one or more embedding
tables sorted by expected occurrences per sample, highest first. Rows never
observed are not materialized; they only count toward ``table_sizes``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

Subset = slice | range | np.ndarray | Callable[..., np.ndarray] | None

# Synthesized histograms use a power-of-two sample count so that
# count = p * n and p = count / n are both exact in binary floating point.
SYNTH_NUM_SAMPLES = 2**20


class DistributionError(ValueError):
    pass


@dataclass(frozen=True)
class RowRecord:
    table_id: int
    row_id: int
    probability: float


@dataclass(frozen=True, eq=False)
class RowDistribution:
    """Rows sorted by probability descending, ties by (table_id, row_id) ascending.

    ``probability`` is the expected number of occurrences of a row in one
    sample, so it may exceed 1 when a row repeats inside a sequence.
    """

    table_ids: np.ndarray
    row_ids: np.ndarray
    probabilities: np.ndarray
    table_sizes: Mapping[int, int]
    num_samples: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        t = np.ascontiguousarray(self.table_ids, dtype=np.int64)
        r = np.ascontiguousarray(self.row_ids, dtype=np.int64)
        p = np.ascontiguousarray(self.probabilities, dtype=np.float64)
        if not (t.shape == r.shape == p.shape) or t.ndim != 1:
            raise DistributionError("table_ids, row_ids and probabilities must be equal-length vectors")
        if p.size and (not np.all(np.isfinite(p)) or p.min() < 0):
            raise DistributionError("probabilities must be finite and >= 0")
        sizes = {int(k): int(v) for k, v in self.table_sizes.items()}
        for tid in np.unique(t).tolist():
            if tid not in sizes:
                raise DistributionError(f"table {tid} has rows but no table size")
        for tid, size in sizes.items():
            if size < 0:
                raise DistributionError(f"table {tid} has negative size")
        for arr in (t, r, p):
            arr.setflags(write=False)
        object.__setattr__(self, "table_ids", t)
        object.__setattr__(self, "row_ids", r)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "table_sizes", dict(sorted(sizes.items())))
        object.__setattr__(self, "num_samples", {int(k): int(v) for k, v in sorted(self.num_samples.items())})

    @classmethod
    def from_rows(
        cls,
        table_ids: Iterable[int],
        row_ids: Iterable[int],
        probabilities: Iterable[float],
        table_sizes: Mapping[int, int],
        num_samples: Mapping[int, int] | None = None,
    ) -> "RowDistribution":
        """Build from unsorted rows, applying the canonical ordering."""
        t = np.asarray(list(table_ids) if not isinstance(table_ids, np.ndarray) else table_ids, dtype=np.int64)
        r = np.asarray(list(row_ids) if not isinstance(row_ids, np.ndarray) else row_ids, dtype=np.int64)
        p = np.asarray(
            list(probabilities) if not isinstance(probabilities, np.ndarray) else probabilities, dtype=np.float64
        )
        if t.shape != r.shape or t.shape != p.shape:
            raise DistributionError("table_ids, row_ids and probabilities must be equal-length vectors")
        order = canonical_order(t, r, p)
        return cls(t[order], r[order], p[order], table_sizes, num_samples or {})

    def __len__(self) -> int:
        return int(self.probabilities.shape[0])

    def __getitem__(self, i: int) -> RowRecord:
        return RowRecord(int(self.table_ids[i]), int(self.row_ids[i]), float(self.probabilities[i]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RowDistribution):
            return NotImplemented
        return (
            np.array_equal(self.table_ids, other.table_ids)
            and np.array_equal(self.row_ids, other.row_ids)
            and np.array_equal(self.probabilities, other.probabilities)
            and dict(self.table_sizes) == dict(other.table_sizes)
            and dict(self.num_samples) == dict(other.num_samples)
        )

    @property
    def total_rows(self) -> int:
        """Row count over all tables, including never-observed rows."""
        return sum(self.table_sizes.values())

    @property
    def unmaterialized_rows(self) -> int:
        return self.total_rows - len(self)

    @property
    def tables(self) -> list[int]:
        return list(self.table_sizes)

    @property
    def total_length(self) -> float:
        return expected_length(self)

    def is_sorted(self) -> bool:
        if len(self) < 2:
            return True
        return bool(np.all(canonical_order(self.table_ids, self.row_ids, self.probabilities) == np.arange(len(self))))

    def table(self, table_id: int) -> "RowDistribution":
        mask = self.table_ids == table_id
        return RowDistribution(
            self.table_ids[mask],
            self.row_ids[mask],
            self.probabilities[mask],
            {table_id: self.table_sizes[table_id]},
            {table_id: self.num_samples[table_id]} if table_id in self.num_samples else {},
        )

    def records(self) -> list[RowRecord]:
        return [self[i] for i in range(len(self))]


def canonical_order(table_ids: np.ndarray, row_ids: np.ndarray, probabilities: np.ndarray) -> np.ndarray:
    # lexsort: last key is primary.
    return np.lexsort((row_ids, table_ids, -probabilities))


def expected_length(dist: RowDistribution, subset: Subset = None) -> float:
    """Expected occurrences per sample over ``subset`` (all rows by default).

    ``subset`` may be a slice/range of sorted positions, a boolean mask, an
    index array, or a callable ``f(table_ids, row_ids, probabilities) -> mask``.
    The sum is exactly rounded (``math.fsum``).
    """
    p = dist.probabilities
    if subset is None:
        sel = p
    elif isinstance(subset, slice):
        sel = p[subset]
    elif isinstance(subset, range):
        if len(subset) and (subset[0] < 0 or subset[-1] >= len(p) or subset[0] >= len(p)):
            raise IndexError("subset range out of bounds")
        sel = p[subset.start : subset.stop : subset.step] if subset.step > 0 else p[list(subset)]
    elif callable(subset):
        sel = p[np.asarray(subset(dist.table_ids, dist.row_ids, p), dtype=bool)]
    else:
        sel = p[np.asarray(subset)]
    return math.fsum(sel.tolist())


def load_histogram(
    source: str | Path | Iterable[Sequence[str]],
    table_id: int,
    table_size: int,
    num_samples: int,
) -> RowDistribution:
    """Read a ``row_id,count`` histogram for one table.

    ``probability = count / num_samples``; zero counts are dropped but remain
    part of ``table_size``. Counts may be non-integral (expected counts).
    """
    if num_samples < 1:
        raise DistributionError("num_samples must be >= 1")
    if table_size < 0:
        raise DistributionError("table size must be >= 0")
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            rows = list(csv.reader(fh))
        label = str(source)
    else:
        rows = [list(r) for r in source]
        label = "<histogram>"
    if not rows or [c.strip() for c in rows[0]] != ["row_id", "count"]:
        raise DistributionError(f"{label}: expected header 'row_id,count'")

    seen: set[int] = set()
    ids: list[int] = []
    counts: list[float] = []
    for lineno, rec in enumerate(rows[1:], start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != 2:
            raise DistributionError(f"{label}:{lineno}: expected 2 fields")
        row_id = int(rec[0])
        count = float(rec[1])
        if row_id < 0 or row_id >= table_size:
            raise DistributionError(f"{label}:{lineno}: row_id {row_id} outside table of {table_size} rows")
        if row_id in seen:
            raise DistributionError(f"{label}:{lineno}: duplicate row_id {row_id}")
        if not count >= 0 or math.isinf(count):
            raise DistributionError(f"{label}:{lineno}: count must be finite and >= 0")
        seen.add(row_id)
        if count > 0:
            ids.append(row_id)
            counts.append(count)

    p = np.asarray(counts, dtype=np.float64) / float(num_samples)
    return RowDistribution.from_rows(
        np.full(len(ids), table_id, dtype=np.int64),
        np.asarray(ids, dtype=np.int64),
        p,
        {table_id: table_size},
        {table_id: num_samples},
    )


def _format_count(x: float) -> str:
    return str(int(x)) if x.is_integer() else repr(x)


def write_histogram(dist: RowDistribution, table_id: int, path: str | Path, num_samples: int | None = None) -> int:
    """Write one table as ``row_id,count``; returns the sample count used.

    Rows are written in ascending row_id order.
    """
    if num_samples is None:
        num_samples = dist.num_samples.get(table_id, SYNTH_NUM_SAMPLES)
    mask = dist.table_ids == table_id
    ids = dist.row_ids[mask]
    p = dist.probabilities[mask]
    order = np.argsort(ids, kind="stable")
    with open(path, "w", newline="") as fh:
        fh.write("row_id,count\n")
        for rid, prob in zip(ids[order].tolist(), p[order].tolist()):
            fh.write(f"{rid},{_format_count(prob * num_samples)}\n")
    return num_samples


def synthesize_zipf(
    num_rows: int,
    exponent: float,
    target_length: float,
    seed: int = 0,
    table_id: int = 0,
) -> RowDistribution:
    """Power-law table: rank-k row gets probability proportional to ``k**-exponent``.

    Probabilities are scaled so they sum to ``target_length``. The seed only
    shuffles which row_id receives which rank.
    """
    if num_rows < 1:
        raise DistributionError("num_rows must be >= 1")
    if exponent < 0:
        raise DistributionError("exponent must be >= 0")
    if not target_length > 0:
        raise DistributionError("target_length must be > 0")
    ranks = np.arange(1, num_rows + 1, dtype=np.float64)
    weights = ranks ** (-float(exponent))
    p = weights * (target_length / math.fsum(weights.tolist()))
    # Fold the rounding residue into the head row so the exact sum hits the target.
    p[0] += target_length - math.fsum(p.tolist())
    row_ids = np.random.default_rng(seed).permutation(num_rows).astype(np.int64)
    return RowDistribution.from_rows(
        np.full(num_rows, table_id, dtype=np.int64),
        row_ids,
        p,
        {table_id: num_rows},
        {table_id: SYNTH_NUM_SAMPLES},
    )


def merge(distributions: Sequence[RowDistribution]) -> RowDistribution:
    """Union of tables from several distributions, re-sorted globally."""
    if not distributions:
        raise DistributionError("nothing to merge")
    if len(distributions) == 1:
        return distributions[0]
    sizes: dict[int, int] = {}
    samples: dict[int, int] = {}
    for d in distributions:
        for tid, size in d.table_sizes.items():
            if tid in sizes:
                raise DistributionError(f"table_id collision: {tid}")
            sizes[tid] = size
        samples.update(d.num_samples)
    return RowDistribution.from_rows(
        np.concatenate([d.table_ids for d in distributions]),
        np.concatenate([d.row_ids for d in distributions]),
        np.concatenate([d.probabilities for d in distributions]),
        sizes,
        samples,
    )
