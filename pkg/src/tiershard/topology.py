"""Cluster shape and measured collective bandwidths."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

GIB = 2**30

# File key -> Topology attribute. Bandwidth keys are in GiB/s on disk.
_COUNT_KEYS = ("num_nodes", "gpus_per_node")
_BANDWIDTH_KEYS = {
    "a2a_global_gibs": "a2a_global",
    "a2a_intra_gibs": "a2a_intra",
    "ar_global_gibs": "ar_global",
    "ar_cross_gibs": "ar_cross",
}


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    """Training cluster: ``num_nodes`` x ``gpus_per_node`` GPUs.

    Bandwidths are bytes/second. ``a2a_intra`` must not be slower than
    ``a2a_global``; a cluster where it is indicates a measurement error.
    """

    num_nodes: int
    gpus_per_node: int
    a2a_global: float
    a2a_intra: float
    ar_global: float
    ar_cross: float

    def __post_init__(self) -> None:
        for name in _COUNT_KEYS:
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise TopologyError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in _BANDWIDTH_KEYS.values():
            value = float(getattr(self, name))
            if not value > 0 or value == float("inf"):
                raise TopologyError(f"{name} must be a positive finite bandwidth, got {value!r}")
            object.__setattr__(self, name, value)
        if self.a2a_intra < self.a2a_global:
            raise TopologyError(
                "degenerate topology: a2a_intra < a2a_global "
                f"({self.a2a_intra / GIB:g} < {self.a2a_global / GIB:g} GiB/s)"
            )

    @property
    def total_gpus(self) -> int:
        return self.num_nodes * self.gpus_per_node

    @property
    def heterogeneous(self) -> bool:
        """True when intra-node all-to-all is strictly faster than global."""
        return self.a2a_intra > self.a2a_global

    def node_of(self, gpu: int) -> int:
        return gpu // self.gpus_per_node

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {k: getattr(self, k) for k in _COUNT_KEYS}
        for key, attr in _BANDWIDTH_KEYS.items():
            doc[key] = getattr(self, attr) / GIB
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "Topology":
        missing = [k for k in (*_COUNT_KEYS, *_BANDWIDTH_KEYS) if k not in doc]
        if missing:
            raise TopologyError(f"topology is missing field(s): {', '.join(missing)}")
        kwargs: dict[str, Any] = {k: doc[k] for k in _COUNT_KEYS}
        for key, attr in _BANDWIDTH_KEYS.items():
            try:
                kwargs[attr] = float(doc[key]) * GIB
            except (TypeError, ValueError):
                raise TopologyError(f"{key} must be a number, got {doc[key]!r}") from None
        return cls(**kwargs)


def load_topology(source: str | Path | Mapping[str, Any]) -> Topology:
    """Load a topology from a YAML/JSON file path or an already-parsed mapping."""
    if isinstance(source, Mapping):
        return Topology.from_dict(source)
    with open(source) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, Mapping):
        raise TopologyError(f"{source}: expected a key/value document")
    return Topology.from_dict(doc)


def dump_topology(topo: Topology, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(topo.to_dict(), fh, sort_keys=False)


def reference_topology() -> Topology:
    """4 nodes x 8 A100 GPUs with measured NCCL collective bandwidths."""
    return Topology.from_dict(
        {
            "num_nodes": 4,
            "gpus_per_node": 8,
            "a2a_global_gibs": 23,
            "a2a_intra_gibs": 95,
            "ar_global_gibs": 73,
            "ar_cross_gibs": 15,
        }
    )
