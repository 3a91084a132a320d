"""Per-GPU memory and communication cost of RW / CW / DP / Flex sharding.

All table-level formulas live in :func:`_terms`. Per-row marginal costs are
obtained by differencing :func:`table_cost` at ``E=1, L=p`` so there is no
second copy of the algebra. Every function here accepts scalars or numpy
arrays for ``E`` / ``L`` / ``p``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple

import numpy as np

from .topology import Topology


class Strategy(str, enum.Enum):
    RW = "RW"
    CW = "CW"
    DP = "DP"
    FLEX = "Flex"

    @classmethod
    def parse(cls, value: "str | Strategy") -> "Strategy":
        if isinstance(value, Strategy):
            return value
        for s in cls:
            if s.value.lower() == str(value).lower():
                return s
        raise ValueError(f"unknown strategy {value!r}; expected one of RW, CW, DP, Flex")


@dataclass(frozen=True)
class CostModelConfig:
    """Training-side constants shared by the planner and the simulator.

    ``dp_replication_multiplier`` is the framework overhead of keeping a
    replicated row (parameters plus optimizer state and gradient buffers).
    ``dp_dynamic_memory`` controls whether the DP lookup outputs count toward
    memory; turning it off makes replication strictly costlier in memory.
    """

    local_batch: int = 4096
    embedding_dim: int = 256
    scalar_bytes: int = 4
    dp_replication_multiplier: float = 6.0
    dynamic_pass_count: int = 2
    static_pass_count: int = 1
    include_id_distribution_bytes: bool = False
    id_bytes: int = 8
    dp_dynamic_memory: bool = True

    def __post_init__(self) -> None:
        for name in ("local_batch", "embedding_dim", "scalar_bytes", "dynamic_pass_count", "static_pass_count", "id_bytes"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        r = float(self.dp_replication_multiplier)
        if not (r >= 1 and math.isfinite(r)):
            raise ValueError(f"dp_replication_multiplier must be >= 1, got {r!r}")
        object.__setattr__(self, "dp_replication_multiplier", r)

    @property
    def row_bytes(self) -> int:
        return self.embedding_dim * self.scalar_bytes

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "CostModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown cost-model field(s): {', '.join(sorted(unknown))}")
        return cls(**doc)


@dataclass(frozen=True)
class StrategyCost:
    """Per-GPU expected costs of one table under one strategy.

    ``rows_accessed_scalars`` counts looked-up scalars (rows x D). Cells that
    do not apply to a strategy are exactly zero. ``*_comm_bytes`` are the
    payloads behind the latencies, already multiplied by the pass count.
    """

    static_memory_bytes: float
    dynamic_memory_bytes: float
    rows_accessed_scalars: float
    input_id_count: float
    dynamic_comm_seconds: float
    static_comm_seconds: float
    dynamic_comm_bytes: float = 0.0
    static_comm_bytes: float = 0.0

    @property
    def memory_bytes(self) -> float:
        return self.static_memory_bytes + self.dynamic_memory_bytes

    @property
    def comm_seconds(self) -> float:
        return self.dynamic_comm_seconds + self.static_comm_seconds

    def __add__(self, other: "StrategyCost") -> "StrategyCost":
        return StrategyCost(*(a + b for a, b in zip(self._values(), other._values())))

    def _values(self) -> tuple:
        return tuple(getattr(self, f) for f in self.__dataclass_fields__)


class _Terms(NamedTuple):
    static_memory: object
    dynamic_memory: object
    rows_accessed: object
    input_ids: object
    a2a_bytes: object
    a2a_bandwidth: float
    ar_bytes: object
    ar_bandwidth: float


def _terms(strategy: Strategy, E, L, cfg: CostModelConfig, topo: Topology) -> _Terms:
    B = cfg.local_batch
    D = cfg.embedding_dim
    s = cfg.scalar_bytes
    R = cfg.dp_replication_multiplier
    U = topo.total_gpus
    W = topo.gpus_per_node
    zero = E * 0.0 + L * 0.0
    id_bytes = cfg.id_bytes if cfg.include_id_distribution_bytes else 0
    lookup_bytes = B * L * D * s

    if strategy is Strategy.RW:
        ids = B * L
        return _Terms(
            (E / U) * D * s, 2 * lookup_bytes, B * L * D, ids,
            cfg.dynamic_pass_count * lookup_bytes + ids * id_bytes, topo.a2a_global,
            zero, topo.ar_global,
        )
    if strategy is Strategy.CW:
        ids = U * B * L
        return _Terms(
            E * (D / U) * s, 2 * lookup_bytes, B * L * D, ids,
            cfg.dynamic_pass_count * lookup_bytes + ids * id_bytes, topo.a2a_global,
            zero, topo.ar_global,
        )
    if strategy is Strategy.DP:
        dyn = lookup_bytes if cfg.dp_dynamic_memory else zero
        return _Terms(
            R * E * D * s, dyn, B * L * D, zero,
            zero, topo.a2a_global,
            cfg.static_pass_count * E * D * s, topo.ar_global,
        )
    if strategy is Strategy.FLEX:
        ids = B * L
        return _Terms(
            R * (E / W) * D * s, 2 * lookup_bytes, B * L * D, ids,
            cfg.dynamic_pass_count * lookup_bytes + ids * id_bytes, topo.a2a_intra,
            cfg.static_pass_count * (E / W) * D * s, topo.ar_cross,
        )
    raise ValueError(f"unknown strategy {strategy!r}")


def table_cost(strategy: "Strategy | str", E, L, cfg: CostModelConfig, topo: Topology) -> StrategyCost:
    """Per-GPU costs of a table with ``E`` rows and expected length ``L``."""
    strategy = Strategy.parse(strategy)
    if np.any(np.asarray(E) < 0) or np.any(np.asarray(L) < 0):
        raise ValueError("E and L must be >= 0")
    t = _terms(strategy, E, L, cfg, topo)
    return StrategyCost(
        static_memory_bytes=t.static_memory,
        dynamic_memory_bytes=t.dynamic_memory,
        rows_accessed_scalars=t.rows_accessed,
        input_id_count=t.input_ids,
        dynamic_comm_seconds=t.a2a_bytes / t.a2a_bandwidth,
        static_comm_seconds=t.ar_bytes / t.ar_bandwidth,
        dynamic_comm_bytes=t.a2a_bytes,
        static_comm_bytes=t.ar_bytes,
    )


def _marginal(strategy: Strategy, p, cfg: CostModelConfig, topo: Topology):
    if np.any(np.asarray(p) < 0):
        raise ValueError("p must be >= 0")
    moved = table_cost(strategy, 1, p, cfg, topo)
    base = table_cost(Strategy.RW, 1, p, cfg, topo)
    return moved.memory_bytes - base.memory_bytes, moved.comm_seconds - base.comm_seconds


def marginal_cost_dp(p, cfg: CostModelConfig, topo: Topology):
    """(delta memory bytes, delta comm seconds) per GPU of replicating one row instead of RW."""
    return _marginal(Strategy.DP, p, cfg, topo)


def marginal_cost_flex(p, cfg: CostModelConfig, topo: Topology):
    """(delta memory bytes, delta comm seconds) per GPU of Flex-sharding one row instead of RW."""
    return _marginal(Strategy.FLEX, p, cfg, topo)


# Closed-form roots of the marginal functions. These are the cross-check
# for the bisection in `breakpoints`, not a second cost model.

def _lookup_cost_per_row(cfg: CostModelConfig) -> float:
    id_bytes = cfg.id_bytes if cfg.include_id_distribution_bytes else 0
    return cfg.dynamic_pass_count * cfg.row_bytes + id_bytes


def closed_form_p_mem_dp(cfg: CostModelConfig, topo: Topology) -> float:
    dyn_weight = 1 if cfg.dp_dynamic_memory else 2
    return (cfg.dp_replication_multiplier - 1 / topo.total_gpus) / (dyn_weight * cfg.local_batch)


def closed_form_p_comm_dp(cfg: CostModelConfig, topo: Topology) -> float:
    return (cfg.static_pass_count * cfg.row_bytes * topo.a2a_global) / (
        topo.ar_global * cfg.local_batch * _lookup_cost_per_row(cfg)
    )


def closed_form_p_comm_flex(cfg: CostModelConfig, topo: Topology) -> float | None:
    if not topo.heterogeneous:
        return None
    g, i = topo.a2a_global, topo.a2a_intra
    return (cfg.static_pass_count * cfg.row_bytes * g * i) / (
        cfg.local_batch * topo.gpus_per_node * topo.ar_cross * _lookup_cost_per_row(cfg) * (i - g)
    )


class BreakpointMismatch(ArithmeticError):
    pass


@dataclass(frozen=True)
class Breakpoints:
    """Row probabilities where moving a row off RW is cost-neutral.

    ``p_mem_flex`` is not a probability: the Flex memory marginal does not
    depend on p, so it is reported as the constant per-row price in bytes.
    ``p_comm_flex`` is None when intra-node all-to-all is no faster than
    global, i.e. Flex never reduces communication.
    """

    p_mem_dp: float
    p_comm_dp: float
    p_mem_flex: float
    p_comm_flex: float | None

    @property
    def has_flex_comm_breakpoint(self) -> bool:
        return self.p_comm_flex is not None

    def to_dict(self) -> dict:
        return {
            "p_mem_dp": self.p_mem_dp,
            "p_comm_dp": self.p_comm_dp,
            "flex_memory_price_bytes": self.p_mem_flex,
            "p_comm_flex": self.p_comm_flex,
            "has_flex_comm_breakpoint": self.has_flex_comm_breakpoint,
        }


def bisect_root(f: Callable[[float], float], lo: float, hi: float, max_iter: int = 2000) -> float | None:
    """Root of a decreasing function on ``[lo, hi]``; None if no sign change."""
    flo, fhi = f(lo), f(hi)
    if flo <= 0:
        return lo
    if fhi > 0:
        return None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return hi if abs(f(hi)) <= abs(f(lo)) else lo


def _check(name: str, numeric: float | None, closed: float | None, rtol: float) -> None:
    if (numeric is None) != (closed is None):
        raise BreakpointMismatch(f"{name}: bisection={numeric} closed-form={closed}")
    if numeric is None:
        return
    if not math.isclose(numeric, closed, rel_tol=rtol, abs_tol=0.0) and not (numeric == closed == 0):
        raise BreakpointMismatch(f"{name}: bisection={numeric!r} closed-form={closed!r}")


def breakpoints(cfg: CostModelConfig, topo: Topology, rtol: float = 1e-9) -> Breakpoints:
    """Find the neutral probabilities by bisection on the differenced marginals.

    Each root is cross-checked against its closed form; disagreement beyond
    ``rtol`` raises :class:`BreakpointMismatch`.
    """
    def root(f, closed):
        hi = 10.0 * max(closed if closed is not None else 0.0, 1.0)
        return bisect_root(f, 0.0, hi)

    c_mem_dp = closed_form_p_mem_dp(cfg, topo)
    c_comm_dp = closed_form_p_comm_dp(cfg, topo)
    c_comm_flex = closed_form_p_comm_flex(cfg, topo)

    p_mem_dp = root(lambda p: marginal_cost_dp(p, cfg, topo)[0], c_mem_dp)
    p_comm_dp = root(lambda p: marginal_cost_dp(p, cfg, topo)[1], c_comm_dp)
    p_comm_flex = root(lambda p: marginal_cost_flex(p, cfg, topo)[1], c_comm_flex)

    _check("p_mem_dp", p_mem_dp, c_mem_dp, rtol)
    _check("p_comm_dp", p_comm_dp, c_comm_dp, rtol)
    _check("p_comm_flex", p_comm_flex, c_comm_flex, rtol)

    return Breakpoints(
        p_mem_dp=c_mem_dp,
        p_comm_dp=c_comm_dp,
        p_mem_flex=float(marginal_cost_flex(0.0, cfg, topo)[0]),
        p_comm_flex=c_comm_flex,
    )


@dataclass(frozen=True)
class RatioPoint:
    alpha: float
    mem_ratio: float
    comm_ratio: float


def normalized_ratio_curve(E: float, alphas, cfg: CostModelConfig, topo: Topology) -> list[RatioPoint]:
    """DP cost normalized to RW for a table of ``E`` rows with ``L = alpha * E``."""
    out = []
    for a in np.asarray(alphas, dtype=np.float64).tolist():
        if not a > 0:
            raise ValueError("alpha must be > 0")
        L = a * E
        dp = table_cost(Strategy.DP, E, L, cfg, topo)
        rw = table_cost(Strategy.RW, E, L, cfg, topo)
        out.append(RatioPoint(a, dp.memory_bytes / rw.memory_bytes, dp.comm_seconds / rw.comm_seconds))
    return out


def ratio_crossing(curve: list[RatioPoint], which: str = "mem") -> float | None:
    """Alpha where the ratio crosses 1, by log-linear interpolation between samples."""
    key = "mem_ratio" if which == "mem" else "comm_ratio"
    for a, b in zip(curve, curve[1:]):
        ya, yb = getattr(a, key) - 1.0, getattr(b, key) - 1.0
        if ya == 0:
            return a.alpha
        if (ya > 0) != (yb > 0):
            # Interpolate in log(alpha); callers sample alpha on a log grid.
            la, lb = math.log(a.alpha), math.log(b.alpha)
            return math.exp(la + (lb - la) * ya / (ya - yb))
    return None
