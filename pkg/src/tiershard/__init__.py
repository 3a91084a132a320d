"""Per-row tiered sharding planner for sequence embedding tables.

Rows of merged embedding tables are split into three tiers by their
expected occurrences per sample: replicated on every GPU (DP), sharded
within a node and replicated across nodes (Flex), or row-wise sharded
across all GPUs (RW). The planner predicts per-GPU memory and collective
costs; the simulator replays sampled batches to check the predictions.
"""

__version__ = "0.1.0"

from .cost_model import (  # noqa: E402
    Breakpoints,
    CostModelConfig,
    Strategy,
    StrategyCost,
    breakpoints,
    marginal_cost_dp,
    marginal_cost_flex,
    normalized_ratio_curve,
    table_cost,
)
from .distribution import (  # noqa: E402
    RowDistribution,
    expected_length,
    load_histogram,
    merge,
    synthesize_zipf,
)
from .planner import (  # noqa: E402
    CostReport,
    ShardingPlan,
    build_frontier,
    coverage_report,
    find_points,
    plan_2tier,
    plan_3tier,
    plan_for_budget,
)
from .topology import Topology, load_topology  # noqa: E402

__all__ = [
    "Breakpoints",
    "CostModelConfig",
    "CostReport",
    "RowDistribution",
    "ShardingPlan",
    "Strategy",
    "StrategyCost",
    "Topology",
    "breakpoints",
    "build_frontier",
    "coverage_report",
    "expected_length",
    "find_points",
    "load_histogram",
    "load_topology",
    "marginal_cost_dp",
    "marginal_cost_flex",
    "merge",
    "normalized_ratio_curve",
    "plan_2tier",
    "plan_3tier",
    "plan_for_budget",
    "synthesize_zipf",
    "table_cost",
]
