import csv
import json
import subprocess
import sys

import pytest
import yaml

from tiershard.cli import load_manifest, load_tables, main
from tiershard.distribution import load_histogram
from tiershard.planner import build_frontier, find_points

from conftest import CONFIGS

FLAT = {"num_nodes": 4, "gpus_per_node": 8, "a2a_global_gibs": 23, "a2a_intra_gibs": 23,
        "ar_global_gibs": 73, "ar_cross_gibs": 15}


def write_manifest(tmp_path, name="m.yaml", **over):
    doc = {
        "topology": str(CONFIGS / "reference_topology.yaml"),
        "cost_model": {"local_batch": 64},
        "tables": [
            {"table_id": 0, "num_rows": 3000, "zipf": {"exponent": 1.1, "target_length": 40}},
            {"table_id": 1, "num_rows": 2000, "zipf": {"exponent": 0.9, "target_length": 20}},
        ],
        "goal": "3tier",
        "seed": 1,
        "output_dir": "out",
        "simulation": {"iterations": 6},
    }
    doc.update(over)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def run(*args):
    return subprocess.run([sys.executable, "-m", "tiershard", *map(str, args)], capture_output=True, text=True)


def test_synth_round_trip_and_rerun(tmp_path):
    m = write_manifest(tmp_path)
    assert main(["synth", "--manifest", str(m)]) == 0
    out = tmp_path / "out"
    files = sorted(p.name for p in out.glob("table_*.csv"))
    assert files == ["table_0.csv", "table_1.csv"]
    first = {f: (out / f).read_bytes() for f in files}
    assert main(["synth", "--manifest", str(m)]) == 0
    assert {f: (out / f).read_bytes() for f in files} == first

    man = load_manifest(m)
    from_disk = load_tables(man)
    for spec in man.tables:
        spec.histogram = tmp_path / "missing.csv"
    assert load_tables(man) == from_disk
    assert load_histogram(out / "table_0.csv", 0, 3000, 2**20) == from_disk.table(0)
    echo = json.loads((out / "manifest.resolved.json").read_text())
    assert [t["table_id"] for t in echo["tables"]] == [0, 1]


def test_empty_manifest(tmp_path):
    r = run("synth", "--manifest", write_manifest(tmp_path, tables=[]))
    assert r.returncode != 0
    assert "empty manifest" in r.stderr


def test_plan_outputs_are_byte_identical(tmp_path):
    m = write_manifest(tmp_path)
    assert main(["plan", "--manifest", str(m), "--out", str(tmp_path / "a")]) == 0
    assert main(["plan", "--manifest", str(m), "--out", str(tmp_path / "b")]) == 0
    for name in ("plan.json", "frontier.csv", "points.json", "assignment.csv", "coverage.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    doc = json.loads((tmp_path / "a" / "plan.json").read_text())
    assert doc["goal"] == "3tier"
    assert "created" not in json.dumps(doc)
    meta = json.loads((tmp_path / "a" / "plan.meta.json").read_text())
    assert meta["command"] == "plan"


def test_frontier_goal_minimum_is_point_a(tmp_path):
    m = write_manifest(tmp_path, goal="frontier")
    assert main(["plan", "--manifest", str(m)]) == 0
    out = tmp_path / "out"
    assert not (out / "plan.json").exists()
    with open(out / "frontier.csv") as fh:
        pts = [(int(r["row_index"]), float(r["cum_marginal_memory_bytes"])) for r in csv.DictReader(fh)]
    man = load_manifest(m)
    dist = load_tables(man)
    a = find_points(build_frontier(dist, man.cost_model, man.topology), dist, man.cost_model, man.topology)["A"]
    assert min(pts, key=lambda x: x[1])[0] == a.row_index
    assert json.loads((out / "points.json").read_text())["A"]["row_index"] == a.row_index


def test_cold_table_plan_is_rw_with_warning(tmp_path):
    cold = [{"table_id": 0, "num_rows": 50_000, "zipf": {"exponent": 0.0, "target_length": 0.01}}]
    m = write_manifest(tmp_path, tables=cold, goal="2tier")
    r = run("plan", "--manifest", m)
    assert r.returncode == 0, r.stderr
    assert "pure RW" in r.stderr
    doc = json.loads((tmp_path / "out" / "plan.json").read_text())
    assert doc["dp_cut"] == doc["flex_cut"] == 0

    r = run("simulate", "--manifest", m)
    assert r.returncode == 0, r.stderr
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["simulated_global_a2a_reduction"] == 0.0
    assert summary["speedup"] == 1.0


def test_homogeneous_3tier_warns(tmp_path):
    r = run("plan", "--manifest", write_manifest(tmp_path, topology=FLAT))
    assert r.returncode == 0, r.stderr
    assert "degrading to 2-tier" in r.stderr


def test_simulate_compare_and_determinism(tmp_path):
    m = write_manifest(tmp_path)
    assert main(["plan", "--manifest", str(m)]) == 0
    out = tmp_path / "out"
    assert main(["simulate", "--manifest", str(m), "--threads", "1"]) == 0
    first = (out / "sim_report.json").read_bytes(), (out / "sim_report.csv").read_bytes()
    assert main(["simulate", "--manifest", str(m), "--threads", "4"]) == 0
    assert ((out / "sim_report.json").read_bytes(), (out / "sim_report.csv").read_bytes()) == first
    summary = json.loads((out / "summary.json").read_text())
    assert summary["speedup"] > 1.0
    assert summary["speedup_excluding_overlappable"] > summary["speedup"]
    assert main(["compare", "--manifest", str(m)]) == 0
    rows = list(csv.DictReader(open(out / "compare.csv")))
    assert {r["metric"] for r in rows} >= {"global_a2a_bytes", "global_a2a_reduction"}


def test_missing_plan_file(tmp_path):
    r = run("simulate", "--manifest", write_manifest(tmp_path), "--plan", tmp_path / "nope.json")
    assert r.returncode != 0
    assert "plan file not found" in r.stderr


def test_plan_manifest_mismatch(tmp_path):
    m = write_manifest(tmp_path)
    assert main(["plan", "--manifest", str(m)]) == 0
    other = write_manifest(
        tmp_path, "other.yaml",
        tables=[{"table_id": 0, "num_rows": 3001, "zipf": {"exponent": 1.1, "target_length": 40}}],
    )
    r = run("simulate", "--manifest", other, "--plan", tmp_path / "out" / "plan.json")
    assert r.returncode != 0
    assert "mismatch" in r.stderr


def test_infeasible_budget(tmp_path):
    r = run("plan", "--manifest", write_manifest(tmp_path, goal="budget:-1e30"))
    assert r.returncode != 0
    assert "infeasible budget" in r.stderr


def test_breakpoints_command(tmp_path, capsys):
    assert main(["breakpoints", "--manifest", str(write_manifest(tmp_path, cost_model={"local_batch": 4096}))]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["p_mem_dp"] == pytest.approx((6 - 1 / 32) / 4096, rel=1e-15)
    assert doc["has_flex_comm_breakpoint"] is True


def test_shipped_desk_manifest_loads():
    m = load_manifest(CONFIGS / "desk_4table.yaml")
    assert [t.num_rows for t in m.tables] == [30000, 30000, 10000, 10000]
    assert m.cost_model.local_batch == 64
    assert m.topology.total_gpus == 32
    assert m.iterations >= 200
