"""Row-by-row tier assignment (DP / Flex / RW) over a sorted distribution.

Rows are visited in descending probability. Moving the next row off RW has
an affine marginal cost in its probability, so the cumulative (memory,
comm) walk over that order is the Pareto frontier of DP-vs-RW plans.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

from . import __version__, kernels
from .cost_model import (
    Breakpoints,
    CostModelConfig,
    Strategy,
    breakpoints,
    marginal_cost_dp,
    marginal_cost_flex,
    table_cost,
)
from .distribution import RowDistribution, expected_length
from .topology import Topology

logger = logging.getLogger(__name__)

TIER_DP, TIER_FLEX, TIER_RW = 0, 1, 2
TIER_NAMES = {TIER_DP: "DP", TIER_FLEX: "Flex", TIER_RW: "RW"}
MAX_REPORT_POINTS = 10_000


class PlanError(ValueError):
    pass


class InfeasibleBudget(PlanError):
    pass


@dataclass(frozen=True)
class FrontierPoint:
    row_index: int
    cum_marginal_memory_bytes: float
    cum_marginal_comm_seconds: float


@dataclass(frozen=True, eq=False)
class Frontier:
    """Cumulative marginal cost after moving rows ``[0, k)`` off RW, for every k."""

    strategy: Strategy
    memory: np.ndarray
    comm: np.ndarray

    def __len__(self) -> int:
        return int(self.memory.shape[0])

    def __getitem__(self, k: int) -> FrontierPoint:
        k = range(len(self))[k]
        return FrontierPoint(k, float(self.memory[k]), float(self.comm[k]))

    def __iter__(self) -> Iterator[FrontierPoint]:
        return (self[k] for k in range(len(self)))

    def downsample(self, max_points: int = MAX_REPORT_POINTS, keep: Sequence[int] = ()) -> list[FrontierPoint]:
        """Evenly strided points plus the first, last and any ``keep`` indices."""
        n = len(self)
        if n <= max_points:
            idx = np.arange(n)
        else:
            extra = {0, n - 1, *(k for k in keep if 0 <= k < n)}
            idx = np.unique(np.concatenate([np.linspace(0, n - 1, max_points - len(extra)).astype(np.int64), list(extra)]))
        return [self[int(k)] for k in idx]


def build_frontier(dist: RowDistribution, cfg: CostModelConfig, topo: Topology, strategy: "Strategy | str" = Strategy.DP) -> Frontier:
    if not dist.is_sorted():
        raise PlanError("distribution is not sorted by descending probability")
    strategy = Strategy.parse(strategy)
    if strategy is Strategy.DP:
        d_mem, d_comm = marginal_cost_dp(dist.probabilities, cfg, topo)
    elif strategy is Strategy.FLEX:
        d_mem, d_comm = marginal_cost_flex(dist.probabilities, cfg, topo)
    else:
        raise PlanError("frontier strategy must be DP or Flex")
    d_mem = np.broadcast_to(np.asarray(d_mem, dtype=np.float64), dist.probabilities.shape)
    d_comm = np.broadcast_to(np.asarray(d_comm, dtype=np.float64), dist.probabilities.shape)
    return Frontier(strategy, kernels.compensated_cumsum(d_mem), kernels.compensated_cumsum(d_comm))


def find_points(frontier: Frontier, dist: RowDistribution, cfg: CostModelConfig, topo: Topology) -> dict[str, FrontierPoint]:
    """Landmarks of the DP frontier.

    A: maximum memory savings (first argmin). B: last point with cumulative
    memory <= 0 (memory-neutral). C: last row whose probability is at least
    the DP comm-neutral breakpoint (maximum comm savings). D: every row,
    including never-observed ones, replicated.
    """
    if frontier.strategy is not Strategy.DP:
        raise PlanError("points are defined on the DP frontier")
    bp = breakpoints(cfg, topo)
    a = int(np.argmin(frontier.memory))
    b = int(np.flatnonzero(frontier.memory <= 0)[-1])
    c = _count_at_least(dist.probabilities, bp.p_comm_dp)
    zero_mem, zero_comm = marginal_cost_dp(0.0, cfg, topo)
    extra = dist.unmaterialized_rows
    d = FrontierPoint(
        dist.total_rows,
        float(frontier.memory[-1] + extra * zero_mem),
        float(frontier.comm[-1] + extra * zero_comm),
    )
    return {"A": frontier[a], "B": frontier[b], "C": frontier[c], "D": d}


def _count_at_least(descending: np.ndarray, threshold: float) -> int:
    """Number of leading entries >= threshold in a descending array."""
    return int(np.searchsorted(-descending, -threshold, side="right"))


@dataclass(frozen=True)
class CostReport:
    """Predicted per-GPU costs of a tiered plan and of the all-RW baseline.

    Byte fields are per iteration and already multiplied by pass counts;
    each ``*_seconds`` is the matching payload over its collective's bandwidth.
    """

    dp_rows: int
    flex_rows: int
    rw_rows: int
    dp_coverage: float
    flex_coverage: float
    rw_coverage: float
    global_a2a_bytes: float
    intra_a2a_bytes: float
    ar_global_bytes: float
    ar_cross_bytes: float
    global_a2a_seconds: float
    intra_a2a_seconds: float
    ar_global_seconds: float
    ar_cross_seconds: float
    static_memory_bytes: float
    dynamic_memory_bytes: float
    rows_accessed_scalars: float
    input_id_count: float
    baseline_global_a2a_bytes: float
    baseline_global_a2a_seconds: float
    baseline_memory_bytes: float

    @property
    def memory_bytes(self) -> float:
        return self.static_memory_bytes + self.dynamic_memory_bytes

    @property
    def comm_seconds(self) -> float:
        return self.global_a2a_seconds + self.intra_a2a_seconds + self.ar_global_seconds + self.ar_cross_seconds

    @property
    def blocking_comm_seconds(self) -> float:
        """Comm time excluding the overlappable intra-node and cross-node collectives."""
        return self.global_a2a_seconds + self.ar_global_seconds

    @property
    def global_a2a_reduction(self) -> float:
        if self.baseline_global_a2a_bytes == 0:
            return 0.0
        return 1.0 - self.global_a2a_bytes / self.baseline_global_a2a_bytes

    @property
    def marginal_memory_bytes(self) -> float:
        return self.memory_bytes - self.baseline_memory_bytes

    @property
    def marginal_comm_seconds(self) -> float:
        return self.comm_seconds - self.baseline_global_a2a_seconds

    def metrics(self) -> dict[str, float]:
        return {
            "global_a2a_bytes": self.global_a2a_bytes,
            "intra_a2a_bytes": self.intra_a2a_bytes,
            "ar_global_bytes": self.ar_global_bytes,
            "ar_cross_bytes": self.ar_cross_bytes,
            "global_a2a_seconds": self.global_a2a_seconds,
            "intra_a2a_seconds": self.intra_a2a_seconds,
            "ar_global_seconds": self.ar_global_seconds,
            "ar_cross_seconds": self.ar_cross_seconds,
            "global_a2a_reduction": self.global_a2a_reduction,
        }

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc.update(
            memory_bytes=self.memory_bytes,
            comm_seconds=self.comm_seconds,
            global_a2a_reduction=self.global_a2a_reduction,
            marginal_memory_bytes=self.marginal_memory_bytes,
        )
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "CostReport":
        return cls(**{k: doc[k] for k in cls.__dataclass_fields__})


def predict(dist: RowDistribution, dp_cut: int, flex_cut: int, cfg: CostModelConfig, topo: Topology) -> CostReport:
    n = len(dist)
    if not 0 <= dp_cut <= flex_cut <= n:
        raise PlanError(f"invalid cuts dp_cut={dp_cut} flex_cut={flex_cut} for {n} rows")
    total = expected_length(dist)
    l_dp = expected_length(dist, slice(0, dp_cut))
    l_fx = expected_length(dist, slice(dp_cut, flex_cut))
    l_rw = expected_length(dist, slice(flex_cut, n))
    e_dp, e_fx = dp_cut, flex_cut - dp_cut
    e_rw = dist.total_rows - flex_cut

    dp = table_cost(Strategy.DP, e_dp, l_dp, cfg, topo)
    fx = table_cost(Strategy.FLEX, e_fx, l_fx, cfg, topo)
    rw = table_cost(Strategy.RW, e_rw, l_rw, cfg, topo)
    base = table_cost(Strategy.RW, dist.total_rows, total, cfg, topo)
    both = dp + fx + rw

    if total > 0:
        cov = (l_dp / total, l_fx / total, l_rw / total)
    else:
        cov = (0.0, 0.0, 1.0)
    return CostReport(
        dp_rows=e_dp,
        flex_rows=e_fx,
        rw_rows=e_rw,
        dp_coverage=cov[0],
        flex_coverage=cov[1],
        rw_coverage=cov[2],
        global_a2a_bytes=rw.dynamic_comm_bytes,
        intra_a2a_bytes=fx.dynamic_comm_bytes,
        ar_global_bytes=dp.static_comm_bytes,
        ar_cross_bytes=fx.static_comm_bytes,
        global_a2a_seconds=rw.dynamic_comm_seconds,
        intra_a2a_seconds=fx.dynamic_comm_seconds,
        ar_global_seconds=dp.static_comm_seconds,
        ar_cross_seconds=fx.static_comm_seconds,
        static_memory_bytes=both.static_memory_bytes,
        dynamic_memory_bytes=both.dynamic_memory_bytes,
        rows_accessed_scalars=both.rows_accessed_scalars,
        input_id_count=both.input_id_count,
        baseline_global_a2a_bytes=base.dynamic_comm_bytes,
        baseline_global_a2a_seconds=base.dynamic_comm_seconds,
        baseline_memory_bytes=base.memory_bytes,
    )


@dataclass(frozen=True, eq=False)
class ShardingPlan:
    """Rows ``[0, dp_cut)`` DP, ``[dp_cut, flex_cut)`` Flex, the rest RW.

    Positions refer to the sorted ``dist``; never-observed rows are RW.
    """

    dist: RowDistribution
    cfg: CostModelConfig
    topo: Topology
    dp_cut: int
    flex_cut: int
    goal: str
    predicted: CostReport
    warnings: tuple[str, ...] = ()
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 <= self.dp_cut <= self.flex_cut <= len(self.dist):
            raise PlanError(f"invalid cuts dp_cut={self.dp_cut} flex_cut={self.flex_cut}")

    def tier_codes(self) -> np.ndarray:
        codes = np.full(len(self.dist), TIER_RW, dtype=np.int8)
        codes[: self.dp_cut] = TIER_DP
        codes[self.dp_cut : self.flex_cut] = TIER_FLEX
        return codes

    def tier_slice(self, tier: int) -> slice:
        return {
            TIER_DP: slice(0, self.dp_cut),
            TIER_FLEX: slice(self.dp_cut, self.flex_cut),
            TIER_RW: slice(self.flex_cut, len(self.dist)),
        }[tier]

    def coverage(self) -> dict[str, dict[str, float]]:
        return coverage_report(self, self.dist)

    def to_document(self) -> dict[str, Any]:
        """JSON-ready plan. Contains no timestamps so reruns are byte-identical."""
        d = self.dist

        def rows(tier: int) -> list[list[int]]:
            sl = self.tier_slice(tier)
            return np.stack([d.table_ids[sl], d.row_ids[sl]], axis=1).tolist()

        return {
            "tool": {"name": "tiershard", "version": __version__},
            "goal": self.goal,
            "config": self.cfg.to_dict(),
            "topology": self.topo.to_dict(),
            "tables": {
                str(t): {"num_rows": e, "num_samples": d.num_samples.get(t)} for t, e in d.table_sizes.items()
            },
            "total_rows": d.total_rows,
            "materialized_rows": len(d),
            "dp_cut": self.dp_cut,
            "flex_cut": self.flex_cut,
            "tiers": {
                "DP": {"row_count": self.dp_cut, "rows": rows(TIER_DP)},
                "Flex": {"row_count": self.flex_cut - self.dp_cut, "rows": rows(TIER_FLEX)},
                "RW": {"row_count": d.total_rows - self.flex_cut, "rows": "remainder"},
            },
            "coverage": self.coverage(),
            "predicted": self.predicted.to_dict(),
            "warnings": list(self.warnings),
            "metadata": dict(self.metadata),
        }


def coverage_report(plan: ShardingPlan, dist: RowDistribution) -> dict[str, dict[str, float]]:
    """Per tier: row count and share of expected occurrences it serves."""
    total = expected_length(dist)
    out = {}
    for tier, name in TIER_NAMES.items():
        sl = plan.tier_slice(tier)
        count = sl.stop - sl.start
        if tier == TIER_RW:
            count += dist.unmaterialized_rows
        share = expected_length(dist, sl) / total if total > 0 else float(tier == TIER_RW)
        out[name] = {"row_count": count, "coverage_fraction": share}
    return out


def plan_from_cuts(
    dist, cfg, topo, dp_cut, flex_cut, goal, warnings=(), metadata=None, warn_if_rw: bool = True
) -> ShardingPlan:
    """Plan with explicit tier cuts over the sorted distribution."""
    warnings = list(warnings)
    if flex_cut == 0 and warn_if_rw:
        msg = "plan degenerates to pure RW (no row is worth moving off RW)"
        logger.warning(msg)
        warnings.append(msg)
    return ShardingPlan(
        dist=dist,
        cfg=cfg,
        topo=topo,
        dp_cut=int(dp_cut),
        flex_cut=int(flex_cut),
        goal=goal,
        predicted=predict(dist, int(dp_cut), int(flex_cut), cfg, topo),
        warnings=tuple(warnings),
        metadata=dict(metadata or {}),
    )


def baseline_rw(dist: RowDistribution, cfg: CostModelConfig, topo: Topology) -> ShardingPlan:
    """Every row row-wise sharded."""
    return plan_from_cuts(dist, cfg, topo, 0, 0, "RW", warn_if_rw=False)


def _points_meta(points: Mapping[str, FrontierPoint], bp: Breakpoints) -> dict[str, Any]:
    return {
        "points": {k: asdict(v) for k, v in points.items()},
        "breakpoints": bp.to_dict(),
    }


def plan_2tier(dist: RowDistribution, cfg: CostModelConfig, topo: Topology) -> ShardingPlan:
    """Memory-neutral DP/RW plan: replicate rows up to the frontier's zero crossing."""
    frontier = build_frontier(dist, cfg, topo, Strategy.DP)
    points = find_points(frontier, dist, cfg, topo)
    cut = points["B"].row_index
    return plan_from_cuts(dist, cfg, topo, cut, cut, "2tier", metadata=_points_meta(points, breakpoints(cfg, topo)))


def plan_3tier(dist: RowDistribution, cfg: CostModelConfig, topo: Topology) -> ShardingPlan:
    """Memory-neutral DP/Flex/RW plan.

    Every memory-saving row goes DP; the savings are then spent on Flex rows
    in descending probability until they run out or the next row falls
    below the Flex comm-neutral probability.
    """
    bp = breakpoints(cfg, topo)
    if not bp.has_flex_comm_breakpoint:
        msg = "homogeneous topology (a2a_intra == a2a_global): Flex never saves communication; degrading to 2-tier"
        logger.warning(msg)
        two = plan_2tier(dist, cfg, topo)
        return ShardingPlan(
            dist, cfg, topo, two.dp_cut, two.flex_cut, "3tier", two.predicted,
            (msg, *two.warnings), {**two.metadata, "degraded_to": "2tier"},
        )

    frontier = build_frontier(dist, cfg, topo, Strategy.DP)
    points = find_points(frontier, dist, cfg, topo)
    a = points["A"].row_index
    start_mem = float(frontier.memory[a])
    n_candidates = _count_at_least(dist.probabilities[a:], bp.p_comm_flex)
    meta = _points_meta(points, bp)

    price = bp.p_mem_flex
    if price <= 0:
        # Flex rows free memory here, so only the comm breakpoint limits the tier.
        n_flex = n_candidates
        meta["flex_memory_price_nonpositive"] = True
    else:
        cand = dist.probabilities[a : a + n_candidates]
        flex_mem, _ = marginal_cost_flex(cand, cfg, topo)
        flex_mem = np.broadcast_to(np.asarray(flex_mem, dtype=np.float64), cand.shape)
        # walk[j] is the cumulative memory after adding Flex rows a..a+j.
        walk = kernels.compensated_cumsum(np.concatenate([[start_mem], flex_mem]))[2:]
        within = np.flatnonzero(walk <= 0)
        n_flex = int(within[-1]) + 1 if within.size else 0
    meta["flex_stop"] = "comm_breakpoint" if n_flex == n_candidates else "memory_budget"
    return plan_from_cuts(dist, cfg, topo, a, a + n_flex, "3tier", metadata=meta)


def plan_for_budget(
    dist: RowDistribution,
    cfg: CostModelConfig,
    topo: Topology,
    memory_budget_bytes: float,
    allow_flex: bool = False,
) -> ShardingPlan:
    """Least-comm plan whose cumulative marginal memory stays within the budget.

    Without Flex this picks the lowest-comm frontier point with memory
    <= budget (largest index on ties). With Flex, rows after the max-savings
    point go to whichever of DP or Flex saves more comm and still fits.
    """
    frontier = build_frontier(dist, cfg, topo, Strategy.DP)
    points = find_points(frontier, dist, cfg, topo)
    bp = breakpoints(cfg, topo)
    meta = _points_meta(points, bp)
    meta["memory_budget_bytes"] = memory_budget_bytes
    a = points["A"].row_index

    if not allow_flex:
        k_max = max(a, points["C"].row_index)
        mem = frontier.memory[: k_max + 1]
        feasible = np.flatnonzero(mem <= memory_budget_bytes)
        if feasible.size == 0:
            raise InfeasibleBudget(
                f"infeasible budget: {memory_budget_bytes} bytes is below the maximum savings {float(mem.min())}"
            )
        comm = frontier.comm[feasible]
        best = feasible[np.flatnonzero(comm == comm.min())[-1]]
        meta["achieved"] = {"memory_bytes": float(frontier.memory[best]), "comm_seconds": float(frontier.comm[best])}
        return plan_from_cuts(dist, cfg, topo, best, best, f"budget:{memory_budget_bytes}", metadata=meta)

    if memory_budget_bytes < frontier.memory[a]:
        raise InfeasibleBudget(
            f"infeasible budget: {memory_budget_bytes} bytes is below the maximum savings {float(frontier.memory[a])}"
        )
    meta["extension"] = "budgeted 3-tier (per-row cheaper-strategy rule)"
    p = dist.probabilities[a:]
    dp_mem, dp_comm = (np.broadcast_to(np.asarray(x, dtype=np.float64), p.shape) for x in marginal_cost_dp(p, cfg, topo))
    fx_mem, fx_comm = (np.broadcast_to(np.asarray(x, dtype=np.float64), p.shape) for x in marginal_cost_flex(p, cfg, topo))

    running = _Accumulator(float(frontier.memory[a]))
    comm_total = _Accumulator(float(frontier.comm[a]))
    n_dp = n_fx = 0
    for j in range(p.shape[0]):
        options = []
        # Once Flex starts, DP is never cheaper again for lower-probability rows.
        if n_fx == 0 and dp_comm[j] < 0:
            options.append((dp_comm[j], TIER_DP, dp_mem[j]))
        if fx_comm[j] < 0:
            options.append((fx_comm[j], TIER_FLEX, fx_mem[j]))
        chosen = next((o for o in sorted(options) if running.peek(o[2]) <= memory_budget_bytes), None)
        if chosen is None:
            break
        comm_delta, kind, mem_delta = chosen
        running.add(mem_delta)
        comm_total.add(comm_delta)
        if kind == TIER_DP:
            n_dp += 1
        else:
            n_fx += 1
    dp_cut = a + n_dp
    meta["achieved"] = {"memory_bytes": running.value, "comm_seconds": comm_total.value}
    return plan_from_cuts(dist, cfg, topo, dp_cut, dp_cut + n_fx, f"budget:{memory_budget_bytes}+flex", metadata=meta)


class _Accumulator:
    """Neumaier running sum."""

    def __init__(self, start: float = 0.0) -> None:
        self.s = start
        self.c = 0.0

    def _step(self, x: float) -> tuple[float, float]:
        t = self.s + x
        if abs(self.s) >= abs(x):
            c = self.c + ((self.s - t) + x)
        else:
            c = self.c + ((x - t) + self.s)
        return t, c

    def peek(self, x: float) -> float:
        t, c = self._step(float(x))
        return t + c

    def add(self, x: float) -> None:
        self.s, self.c = self._step(float(x))

    @property
    def value(self) -> float:
        return self.s + self.c


def assignment_rows(plan: ShardingPlan) -> Iterator[tuple[int, int, str]]:
    """(table_id, row_id, tier) for every materialized row, in sorted order."""
    codes = plan.tier_codes()
    for t, r, c in zip(plan.dist.table_ids.tolist(), plan.dist.row_ids.tolist(), codes.tolist()):
        yield t, r, TIER_NAMES[c]


def plan_from_document(doc: Mapping[str, Any], dist: RowDistribution, cfg: CostModelConfig, topo: Topology) -> ShardingPlan:
    """Rebuild a plan written by :meth:`ShardingPlan.to_document` against ``dist``.

    Raises :class:`PlanError` when the tables, sizes or tier membership do
    not correspond to ``dist``.
    """
    tables = {int(t): v["num_rows"] for t, v in doc["tables"].items()}
    if tables != dict(dist.table_sizes):
        raise PlanError(f"plan/manifest mismatch: plan tables {tables} vs manifest {dict(dist.table_sizes)}")
    dp_cut, flex_cut = int(doc["dp_cut"]), int(doc["flex_cut"])
    if flex_cut > len(dist):
        raise PlanError("plan/manifest mismatch: plan has more tiered rows than the distribution")
    for name, sl in (("DP", slice(0, dp_cut)), ("Flex", slice(dp_cut, flex_cut))):
        listed = np.asarray(doc["tiers"][name]["rows"], dtype=np.int64).reshape(-1, 2)
        expected = np.stack([dist.table_ids[sl], dist.row_ids[sl]], axis=1)
        if listed.shape != expected.shape or not np.array_equal(listed, expected):
            raise PlanError(f"plan/manifest mismatch: {name} tier rows differ from the distribution order")
    return ShardingPlan(
        dist, cfg, topo, dp_cut, flex_cut, doc.get("goal", "loaded"),
        predict(dist, dp_cut, flex_cut, cfg, topo), tuple(doc.get("warnings", ())), dict(doc.get("metadata", {})),
    )
