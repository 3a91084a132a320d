import itertools

import pytest

from tiershard.topology import GIB, Topology, TopologyError, dump_topology, load_topology, reference_topology


def test_reference_values():
    t = reference_topology()
    assert (t.num_nodes, t.gpus_per_node, t.total_gpus) == (4, 8, 32)
    assert t.a2a_global == 23 * GIB
    assert t.a2a_intra == 95 * GIB
    assert t.ar_global == 73 * GIB
    assert t.ar_cross == 15 * GIB
    assert t.heterogeneous


@pytest.mark.parametrize("n,w", list(itertools.product([1, 2, 3, 4, 7, 16], [1, 2, 8, 9])))
def test_total_gpus_and_node_of(n, w):
    t = Topology(n, w, GIB, 2 * GIB, GIB, GIB)
    assert t.total_gpus == n * w
    nodes = [t.node_of(g) for g in range(t.total_gpus)]
    assert nodes == [g // w for g in range(n * w)]


def test_yaml_round_trip(tmp_path):
    t = reference_topology()
    path = tmp_path / "topo.yaml"
    dump_topology(t, path)
    assert load_topology(path) == t
    assert load_topology(t.to_dict()) == t


def test_bandwidths_stored_in_bytes_per_second():
    t = load_topology(
        {"num_nodes": 2, "gpus_per_node": 4, "a2a_global_gibs": 1.5, "a2a_intra_gibs": 3,
         "ar_global_gibs": 2, "ar_cross_gibs": 0.5}
    )
    assert t.a2a_global == 1.5 * 2**30
    assert t.ar_cross == 0.5 * 2**30


def test_degenerate_topology_rejected():
    with pytest.raises(TopologyError, match="degenerate topology"):
        Topology(4, 8, 95 * GIB, 23 * GIB, 73 * GIB, 15 * GIB)


def test_homogeneous_is_allowed(flat_topo):
    assert not flat_topo.heterogeneous


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(num_nodes=0),
        dict(gpus_per_node=0),
        dict(a2a_global=0.0),
        dict(ar_cross=-1.0),
    ],
)
def test_invalid_values(kwargs):
    base = dict(num_nodes=4, gpus_per_node=8, a2a_global=GIB, a2a_intra=2 * GIB, ar_global=GIB, ar_cross=GIB)
    base.update(kwargs)
    with pytest.raises(TopologyError):
        Topology(**base)


def test_missing_field():
    doc = reference_topology().to_dict()
    del doc["ar_cross_gibs"]
    with pytest.raises(TopologyError, match="ar_cross"):
        load_topology(doc)
