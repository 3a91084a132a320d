from pathlib import Path

import pytest

from tiershard.cost_model import CostModelConfig
from tiershard.distribution import merge, synthesize_zipf
from tiershard.topology import GIB, Topology, reference_topology

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"

# Four power-law tables at 1/1000 of production row counts.
DESK_TABLES = (
    (0, 30_000, 1.05, 1000.0),
    (1, 30_000, 1.2, 1000.0),
    (2, 10_000, 1.0, 500.0),
    (3, 10_000, 1.1, 500.0),
)


def desk_distribution(seed: int = 0):
    return merge([synthesize_zipf(e, s, L, seed=seed + tid, table_id=tid) for tid, e, s, L in DESK_TABLES])


@pytest.fixture(scope="session")
def ref_topo() -> Topology:
    return reference_topology()


@pytest.fixture(scope="session")
def flat_topo() -> Topology:
    # Intra-node all-to-all no faster than global: Flex never saves comm.
    return Topology(4, 8, 23 * GIB, 23 * GIB, 73 * GIB, 15 * GIB)


@pytest.fixture(scope="session")
def ref_cfg() -> CostModelConfig:
    return CostModelConfig(local_batch=4096)


@pytest.fixture(scope="session")
def desk_cfg() -> CostModelConfig:
    return CostModelConfig(local_batch=64)


@pytest.fixture(scope="session")
def desk_dist():
    return desk_distribution()


# Filled by test_acceptance; echoed after the run so the lines land in test logs.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
