"""Trace-driven replay of sampled batches against a sharding plan.

Generative model: within a sample, row i occurs Poisson(p_i) times,
independently across rows and samples. A GPU's local batch of B samples is
drawn in one shot as N ~ Poisson(B * L) occurrences, each picking a row
with probability p_i / L (alias method). By Poisson splitting this gives
exactly independent Poisson(B * p_i) per-row counts; assigning every
occurrence a uniformly random sample slot recovers the per-sample view.

Only expectations are model-free. Tail metrics (max-over-GPU payloads,
peak memory, load imbalance) depend on the independence assumption.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import kernels
from .cost_model import CostModelConfig
from .distribution import RowDistribution, expected_length
from .planner import TIER_DP, TIER_FLEX, TIER_RW, CostReport, ShardingPlan
from .topology import Topology


class SimulationError(ValueError):
    pass


def build_alias_table(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias table for sampling index i with probability weights[i] / sum."""
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    total = math.fsum(w.tolist())
    if n == 0 or not total > 0:
        raise SimulationError("cannot sample from an empty or all-zero distribution")
    scaled = (w * (n / total)).tolist()
    prob = [0.0] * n
    alias = list(range(n))
    small = [i for i, q in enumerate(scaled) if q < 1.0]
    large = [i for i, q in enumerate(scaled) if q >= 1.0]
    while small and large:
        s = small.pop()
        g = large[-1]
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            large.pop()
            small.append(g)
    for i in large + small:
        prob[i] = 1.0
    return np.asarray(prob, dtype=np.float64), np.asarray(alias, dtype=np.int64)


@dataclass(frozen=True)
class IterationDraws:
    per_gpu: np.ndarray  # occurrences drawn by each GPU's local batch
    draws: np.ndarray  # row positions in the sorted distribution, grouped by GPU


@dataclass(frozen=True, eq=False)
class Workload:
    """Seeded stream of training iterations over ``dist``.

    Iteration ``i`` depends only on ``(seed, i)``, so iterations can be
    generated in any order or in parallel with identical results.
    """

    dist: RowDistribution
    local_batch: int
    num_gpus: int
    gpus_per_node: int
    seed: int
    num_iterations: int
    _alias: tuple[np.ndarray, np.ndarray] = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self._alias is None:
            object.__setattr__(self, "_alias", build_alias_table(self.dist.probabilities))

    @property
    def expected_length(self) -> float:
        return expected_length(self.dist)

    def _rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))

    def iteration(self, i: int) -> IterationDraws:
        if not 0 <= i < self.num_iterations:
            raise IndexError(f"iteration {i} outside [0, {self.num_iterations})")
        rng = self._rng(i, 0)
        per_gpu = rng.poisson(self.local_batch * self.expected_length, size=self.num_gpus).astype(np.int64)
        u = rng.random(int(per_gpu.sum()))
        prob, alias = self._alias
        return IterationDraws(per_gpu, kernels.alias_sample(u, prob, alias))

    def samples(self, i: int, gpu: int) -> list[np.ndarray]:
        """Per-sample row positions for one GPU's local batch in iteration ``i``."""
        it = self.iteration(i)
        start = int(it.per_gpu[:gpu].sum())
        mine = it.draws[start : start + int(it.per_gpu[gpu])]
        slot = self._rng(i, 1, gpu).integers(0, self.local_batch, size=mine.shape[0])
        order = np.argsort(slot, kind="stable")
        bounds = np.searchsorted(slot[order], np.arange(self.local_batch + 1))
        return [mine[order[bounds[k] : bounds[k + 1]]] for k in range(self.local_batch)]

    def row_counts(self, i: int) -> np.ndarray:
        """(num_gpus, rows) occurrence count matrix for iteration ``i``."""
        it = self.iteration(i)
        n = len(self.dist)
        gpu = np.repeat(np.arange(self.num_gpus), it.per_gpu)
        return np.bincount(gpu * n + it.draws, minlength=self.num_gpus * n).reshape(self.num_gpus, n)


def sample_workload(
    dist: RowDistribution, cfg: CostModelConfig, topo: Topology, seed: int, num_iterations: int
) -> Workload:
    if not expected_length(dist) > 0:
        raise SimulationError("distribution has zero expected length; nothing to sample")
    if num_iterations < 1:
        raise SimulationError("num_iterations must be >= 1")
    return Workload(dist, cfg.local_batch, topo.total_gpus, topo.gpus_per_node, int(seed), int(num_iterations))


@dataclass(frozen=True, eq=False)
class Placement:
    """Where each materialized row lives.

    ``home`` is the owning GPU for RW rows, the intra-node slot for Flex rows
    (replicated on that slot in every node) and -1 for DP rows. GPUs are
    numbered node-major: ``gpu = node * gpus_per_node + slot``.
    """

    tiers: np.ndarray
    home: np.ndarray
    topo: Topology
    hash_seed: int

    def gpus(self, i: int) -> list[int]:
        tier = int(self.tiers[i])
        W = self.topo.gpus_per_node
        if tier == TIER_DP:
            return list(range(self.topo.total_gpus))
        if tier == TIER_FLEX:
            return [node * W + int(self.home[i]) for node in range(self.topo.num_nodes)]
        return [int(self.home[i])]


def rw_owner(table_ids, row_ids, topo: Topology, hash_seed: int = 0) -> np.ndarray:
    return kernels.reduce_range(kernels.hash_rows(table_ids, row_ids, hash_seed), topo.total_gpus)


def flex_slot(table_ids, row_ids, topo: Topology, hash_seed: int = 0) -> np.ndarray:
    return kernels.reduce_range(kernels.hash_rows(table_ids, row_ids, hash_seed), topo.gpus_per_node)


def assign_rows(plan: ShardingPlan, topo: Topology, hash_seed: int = 0) -> Placement:
    d = plan.dist
    tiers = plan.tier_codes()
    h = kernels.hash_rows(d.table_ids, d.row_ids, hash_seed)
    home = np.full(len(d), -1, dtype=np.int64)
    rw = tiers == TIER_RW
    fx = tiers == TIER_FLEX
    home[rw] = kernels.reduce_range(h[rw], topo.total_gpus)
    home[fx] = kernels.reduce_range(h[fx], topo.gpus_per_node)
    return Placement(tiers, home, topo, hash_seed)


def _static_rows_per_gpu(plan: ShardingPlan, placement: Placement, topo: Topology) -> tuple[np.ndarray, np.ndarray, int]:
    """RW rows owned by each GPU (never-observed rows included) and Flex rows per slot."""
    d = plan.dist
    U, W = topo.total_gpus, topo.gpus_per_node
    rw_rows = np.zeros(U, dtype=np.int64)
    for t, size in d.table_sizes.items():
        for lo in range(0, size, 1 << 22):
            ids = np.arange(lo, min(size, lo + (1 << 22)), dtype=np.int64)
            rw_rows += np.bincount(rw_owner(np.full(ids.shape, t), ids, topo, placement.hash_seed), minlength=U)
    moved = placement.tiers != TIER_RW
    if moved.any():
        rw_rows -= np.bincount(rw_owner(d.table_ids[moved], d.row_ids[moved], topo, placement.hash_seed), minlength=U)
    flex_rows = np.bincount(placement.home[placement.tiers == TIER_FLEX], minlength=W)
    dp_rows = int(np.count_nonzero(placement.tiers == TIER_DP))
    return rw_rows, flex_rows, dp_rows


# Per-iteration metrics, in CSV order.
METRICS = (
    "global_a2a_bytes",
    "global_a2a_max_bytes",
    "global_a2a_sent_total",
    "global_a2a_received_total",
    "intra_a2a_bytes",
    "intra_a2a_max_bytes",
    "intra_a2a_sent_total",
    "intra_a2a_received_total",
    "ar_global_bytes",
    "ar_cross_bytes",
    "ar_cross_max_bytes",
    "global_a2a_seconds",
    "intra_a2a_seconds",
    "ar_global_seconds",
    "ar_cross_seconds",
    "baseline_global_a2a_bytes",
    "global_a2a_reduction",
    "peak_dynamic_memory_bytes",
    "peak_memory_bytes",
    "rows_accessed_min",
    "rows_accessed_max",
    "rows_accessed_mean",
    "load_imbalance",
)

OVERLAPPABLE = ("intra_a2a", "ar_cross")


@dataclass(frozen=True, eq=False)
class SimReport:
    """Per-iteration measurements; byte metrics are per GPU unless named ``*_total``.

    ``*_bytes`` are GPU means, ``*_max_bytes`` the busiest GPU (send or
    receive). Latencies use the busiest GPU. ``global_a2a_reduction`` is
    against an all-RW placement of the same sampled batches.
    """

    per_iteration: Mapping[str, np.ndarray]
    goal: str = ""
    coverage: Mapping[str, float] = field(default_factory=dict)

    @property
    def num_iterations(self) -> int:
        return int(next(iter(self.per_iteration.values())).shape[0])

    def mean(self, metric: str) -> float:
        return math.fsum(self.per_iteration[metric].tolist()) / self.num_iterations

    def __getattr__(self, name: str) -> float:
        per = self.__dict__.get("per_iteration")
        if per is not None and name in per:
            return self.mean(name)
        raise AttributeError(name)

    @property
    def comm_seconds(self) -> float:
        return sum(self.mean(f"{c}_seconds") for c in ("global_a2a", "intra_a2a", "ar_global", "ar_cross"))

    @property
    def blocking_comm_seconds(self) -> float:
        return self.mean("global_a2a_seconds") + self.mean("ar_global_seconds")

    def metrics(self) -> dict[str, float]:
        return {
            "global_a2a_bytes": self.mean("global_a2a_bytes"),
            "intra_a2a_bytes": self.mean("intra_a2a_bytes"),
            "ar_global_bytes": self.mean("ar_global_bytes"),
            "ar_cross_bytes": self.mean("ar_cross_bytes"),
            "global_a2a_seconds": self.mean("global_a2a_seconds"),
            "intra_a2a_seconds": self.mean("intra_a2a_seconds"),
            "ar_global_seconds": self.mean("ar_global_seconds"),
            "ar_cross_seconds": self.mean("ar_cross_seconds"),
            "global_a2a_reduction": self.reduction(),
        }

    def reduction(self) -> float:
        base = math.fsum(self.per_iteration["baseline_global_a2a_bytes"].tolist())
        if base == 0:
            return 0.0
        return 1.0 - math.fsum(self.per_iteration["global_a2a_bytes"].tolist()) / base

    def to_dict(self) -> dict[str, Any]:
        return {
            "goal": self.goal,
            "num_iterations": self.num_iterations,
            "coverage": dict(self.coverage),
            "mean": {m: self.mean(m) for m in METRICS},
            "global_a2a_reduction": self.reduction(),
            "comm_seconds": self.comm_seconds,
            "blocking_comm_seconds": self.blocking_comm_seconds,
            "per_iteration": {m: self.per_iteration[m].tolist() for m in METRICS},
        }

    def write_csv(self, path: str | Path) -> None:
        """Flat ``iteration,metric,value`` rows for plotting."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "metric", "value"])
            for i in range(self.num_iterations):
                for m in METRICS:
                    w.writerow([i, m, repr(float(self.per_iteration[m][i]))])


class _Replay:
    """Fixed per-plan quantities reused across iterations."""

    def __init__(self, plan: ShardingPlan, workload: Workload, cfg: CostModelConfig, topo: Topology, hash_seed: int):
        if workload.num_gpus != topo.total_gpus or workload.gpus_per_node != topo.gpus_per_node:
            raise SimulationError("workload and topology disagree on the GPU layout")
        if workload.local_batch != cfg.local_batch:
            raise SimulationError("workload and cost model disagree on the local batch size")
        self.cfg, self.topo, self.plan = cfg, topo, plan
        placement = assign_rows(plan, topo, hash_seed)
        tiers, home = placement.tiers, placement.home
        if workload.dist is not plan.dist and not _same_rows(workload.dist, plan.dist):
            index = _row_index(workload.dist, plan.dist)
            tiers, home = tiers[index], home[index]
        self.tiers, self.home = tiers, home

        rw_rows, flex_rows, dp_rows = _static_rows_per_gpu(plan, placement, topo)
        Ds = cfg.row_bytes
        R = cfg.dp_replication_multiplier
        slot = np.arange(topo.total_gpus) % topo.gpus_per_node
        self.static_memory = rw_rows * Ds + R * dp_rows * Ds + R * flex_rows[slot] * Ds
        self.ar_global_bytes = cfg.static_pass_count * dp_rows * Ds
        self.ar_cross_per_gpu = cfg.static_pass_count * flex_rows[slot] * Ds
        id_bytes = cfg.id_bytes if cfg.include_id_distribution_bytes else 0
        self.occurrence_bytes = cfg.dynamic_pass_count * Ds + id_bytes

    def run(self, draws: IterationDraws) -> dict[str, float]:
        cfg, topo = self.cfg, self.topo
        U = topo.total_gpus
        rw_recv, rw_send, fx_recv, fx_send, dp_local, served = kernels.attribute(
            draws.draws, draws.per_gpu, self.tiers, self.home, U, topo.gpus_per_node
        )
        k = self.occurrence_bytes
        Ds = cfg.row_bytes
        g_max = k * float(max(rw_recv.max(), rw_send.max()))
        i_max = k * float(max(fx_recv.max(), fx_send.max()))
        cross_max = float(self.ar_cross_per_gpu.max())
        dyn = (rw_recv + rw_send + fx_recv + fx_send) * Ds
        if cfg.dp_dynamic_memory:
            dyn = dyn + dp_local * Ds
        served_mean = float(served.mean())
        return {
            "global_a2a_bytes": k * float(rw_recv.sum()) / U,
            "global_a2a_max_bytes": g_max,
            "global_a2a_sent_total": k * float(rw_send.sum()),
            "global_a2a_received_total": k * float(rw_recv.sum()),
            "intra_a2a_bytes": k * float(fx_recv.sum()) / U,
            "intra_a2a_max_bytes": i_max,
            "intra_a2a_sent_total": k * float(fx_send.sum()),
            "intra_a2a_received_total": k * float(fx_recv.sum()),
            "ar_global_bytes": float(self.ar_global_bytes),
            "ar_cross_bytes": float(self.ar_cross_per_gpu.mean()),
            "ar_cross_max_bytes": cross_max,
            "global_a2a_seconds": g_max / topo.a2a_global,
            "intra_a2a_seconds": i_max / topo.a2a_intra,
            "ar_global_seconds": self.ar_global_bytes / topo.ar_global,
            "ar_cross_seconds": cross_max / topo.ar_cross,
            "baseline_global_a2a_bytes": k * float(draws.per_gpu.sum()) / U,
            "global_a2a_reduction": 1.0 - float(rw_recv.sum()) / float(draws.per_gpu.sum()) if draws.per_gpu.sum() else 0.0,
            "peak_dynamic_memory_bytes": float(dyn.max()),
            "peak_memory_bytes": float((self.static_memory + dyn).max()),
            "rows_accessed_min": float(served.min()),
            "rows_accessed_max": float(served.max()),
            "rows_accessed_mean": served_mean,
            "load_imbalance": float(served.max()) / served_mean if served_mean > 0 else 1.0,
        }


def _same_rows(a: RowDistribution, b: RowDistribution) -> bool:
    return np.array_equal(a.table_ids, b.table_ids) and np.array_equal(a.row_ids, b.row_ids)


def _row_index(workload_dist: RowDistribution, plan_dist: RowDistribution) -> np.ndarray:
    """Position in ``plan_dist`` of every row in ``workload_dist``."""
    key_plan = plan_dist.table_ids.astype(np.uint64) << np.uint64(40) | plan_dist.row_ids.astype(np.uint64)
    key_work = workload_dist.table_ids.astype(np.uint64) << np.uint64(40) | workload_dist.row_ids.astype(np.uint64)
    order = np.argsort(key_plan, kind="stable")
    pos = np.searchsorted(key_plan[order], key_work)
    pos = np.minimum(pos, max(len(order) - 1, 0))
    if len(order) == 0 or not np.array_equal(key_plan[order][pos], key_work):
        raise SimulationError("workload contains rows absent from the plan")
    return order[pos]


def simulate_plans(
    plans: Sequence[ShardingPlan],
    workload: Workload,
    cfg: CostModelConfig,
    topo: Topology,
    hash_seed: int = 0,
    threads: int = 1,
) -> list[SimReport]:
    """Replay the same sampled iterations against several plans."""
    replays = [_Replay(p, workload, cfg, topo, hash_seed) for p in plans]

    def one(i: int) -> list[dict[str, float]]:
        draws = workload.iteration(i)
        return [r.run(draws) for r in replays]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(workload.num_iterations)))
    else:
        rows = [one(i) for i in range(workload.num_iterations)]

    reports = []
    for j, plan in enumerate(plans):
        per = {m: np.array([row[j][m] for row in rows], dtype=np.float64) for m in METRICS}
        cov = {k: v["coverage_fraction"] for k, v in plan.coverage().items()}
        reports.append(SimReport(per, plan.goal, cov))
    return reports


def simulate(
    plan: ShardingPlan, workload: Workload, cfg: CostModelConfig, topo: Topology, hash_seed: int = 0, threads: int = 1
) -> SimReport:
    return simulate_plans([plan], workload, cfg, topo, hash_seed, threads)[0]


@dataclass(frozen=True)
class Discrepancy:
    metric: str
    predicted: float
    observed: float
    relative_error: float
    ratio: float
    flagged: bool


def compare(predicted: CostReport | SimReport, observed: CostReport | SimReport, tolerance: float = 0.02) -> list[Discrepancy]:
    """Relative error per shared metric; metrics beyond ``tolerance`` are flagged.

    Reduction fractions are compared by absolute difference (percentage points).
    """
    p, o = predicted.metrics(), observed.metrics()
    out = []
    for name in p:
        a, b = p[name], o[name]
        if name == "global_a2a_reduction":
            err = abs(b - a)
        elif a == b:
            err = 0.0
        elif a == 0:
            err = math.inf
        else:
            err = abs(b - a) / abs(a)
        ratio = b / a if a != 0 else (1.0 if b == 0 else math.inf)
        out.append(Discrepancy(name, a, b, err, ratio, err > tolerance))
    return out


def speedup(baseline: SimReport | CostReport, plan: SimReport | CostReport, include_overlappable: bool = True) -> float:
    """Baseline total comm latency over the plan's."""
    if include_overlappable:
        num, den = baseline.comm_seconds, plan.comm_seconds
    else:
        num, den = baseline.blocking_comm_seconds, plan.blocking_comm_seconds
    return num / den if den > 0 else math.inf
