"""``tiershard`` command line: synth, plan, simulate, compare, breakpoints.

Every command reads one manifest (YAML or JSON). Relative paths inside the
manifest resolve against the manifest's directory. Machine artifacts go to
the output directory, tables to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import __version__
from .cost_model import CostModelConfig, breakpoints
from .distribution import (
    SYNTH_NUM_SAMPLES,
    RowDistribution,
    load_histogram,
    merge,
    synthesize_zipf,
    write_histogram,
)
from .planner import (
    MAX_REPORT_POINTS,
    PlanError,
    ShardingPlan,
    assignment_rows,
    baseline_rw,
    build_frontier,
    find_points,
    plan_2tier,
    plan_3tier,
    plan_for_budget,
    plan_from_document,
)
from .simulator import SimReport, compare, sample_workload, simulate_plans, speedup
from .topology import Topology, TopologyError, load_topology

logger = logging.getLogger("tiershard")


class ManifestError(ValueError):
    pass


@dataclass
class TableSpec:
    table_id: int
    num_rows: int
    histogram: Path | None
    num_samples: int
    zipf: dict[str, Any] | None


@dataclass
class Manifest:
    path: Path
    topology: Topology
    cost_model: CostModelConfig
    tables: list[TableSpec]
    goal: str
    seed: int
    output_dir: Path
    simulation: dict[str, Any] = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return int(self.simulation.get("iterations", 200))

    @property
    def hash_seed(self) -> int:
        return int(self.simulation.get("hash_seed", self.seed))

    def echo(self) -> dict[str, Any]:
        return {
            "topology": self.topology.to_dict(),
            "cost_model": self.cost_model.to_dict(),
            "tables": [
                {
                    "table_id": t.table_id,
                    "num_rows": t.num_rows,
                    "num_samples": t.num_samples,
                    "histogram": str(t.histogram) if t.histogram else None,
                    "zipf": t.zipf,
                }
                for t in self.tables
            ],
            "goal": self.goal,
            "seed": self.seed,
            "simulation": {"iterations": self.iterations, "hash_seed": self.hash_seed},
        }


def load_manifest(path: str | Path, out: str | Path | None = None) -> Manifest:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: expected a key/value document")
    base = path.parent

    def resolve(p: str | None) -> Path | None:
        if p is None:
            return None
        q = Path(p)
        return q if q.is_absolute() else base / q

    topo_src = doc.get("topology")
    if topo_src is None:
        raise ManifestError("manifest has no topology")
    if isinstance(topo_src, dict):
        topo = load_topology(topo_src)
    else:
        topo_path = resolve(topo_src)
        if not topo_path.exists():
            raise ManifestError(f"topology file not found: {topo_path}")
        topo = load_topology(topo_path)

    cfg = CostModelConfig.from_dict(doc.get("cost_model") or {})
    seed = int(doc.get("seed", 0))
    output_dir = Path(out) if out is not None else resolve(doc.get("output_dir", "out"))

    tables = []
    for entry in doc.get("tables") or []:
        tid = int(entry["table_id"])
        hist = resolve(entry.get("histogram"))
        zipf = entry.get("zipf")
        if hist is None and zipf is None:
            raise ManifestError(f"table {tid}: needs a histogram path or a zipf spec")
        if hist is None:
            hist = output_dir / f"table_{tid}.csv"
        tables.append(
            TableSpec(
                table_id=tid,
                num_rows=int(entry["num_rows"]),
                histogram=hist,
                num_samples=int(entry.get("num_samples", SYNTH_NUM_SAMPLES)),
                zipf=dict(zipf) if zipf is not None else None,
            )
        )
    if not tables:
        raise ManifestError("empty manifest: no tables")
    ids = [t.table_id for t in tables]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"duplicate table_id in manifest: {ids}")
    return Manifest(
        path=path,
        topology=topo,
        cost_model=cfg,
        tables=tables,
        goal=str(doc.get("goal", "2tier")),
        seed=seed,
        output_dir=output_dir,
        simulation=dict(doc.get("simulation") or {}),
    )


def _zipf_seed(seed: int, spec: TableSpec) -> int:
    if spec.zipf and "seed" in spec.zipf:
        return int(spec.zipf["seed"])
    return int(np.random.SeedSequence([seed, spec.table_id]).generate_state(1)[0])


def _synthesize(m: Manifest, spec: TableSpec) -> RowDistribution:
    z = spec.zipf or {}
    return synthesize_zipf(
        spec.num_rows,
        float(z.get("exponent", 1.05)),
        float(z["target_length"]),
        seed=_zipf_seed(m.seed, spec),
        table_id=spec.table_id,
    )


def load_tables(m: Manifest) -> RowDistribution:
    """Merged distribution: histograms when present, else in-memory synthesis."""
    dists = []
    for spec in m.tables:
        if spec.histogram is not None and spec.histogram.exists():
            dists.append(load_histogram(spec.histogram, spec.table_id, spec.num_rows, spec.num_samples))
        elif spec.zipf is not None:
            dists.append(_synthesize(m, spec))
        else:
            raise ManifestError(f"histogram not found: {spec.histogram}")
    return merge(dists)


def _dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sidecar(path: Path, command: str, m: Manifest) -> None:
    _dump_json(
        {
            "command": command,
            "manifest": str(m.path),
            "tool_version": __version__,
            "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        },
        path,
    )


def _print_table(rows: Sequence[Sequence[Any]], header: Sequence[str]) -> None:
    cells = [list(map(str, header))] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for k, r in enumerate(cells):
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)))
        if k == 0:
            print("  ".join("-" * w for w in widths))


def _fmt(x: Any) -> str:
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def cmd_synth(m: Manifest) -> int:
    targets = [s for s in m.tables if s.zipf is not None]
    if not targets:
        raise ManifestError("empty manifest: no zipf tables to synthesize")
    m.output_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for spec in targets:
        dist = _synthesize(m, spec)
        spec.histogram.parent.mkdir(parents=True, exist_ok=True)
        write_histogram(dist, spec.table_id, spec.histogram, spec.num_samples)
        rows.append((spec.table_id, spec.num_rows, dist.total_length, str(spec.histogram)))
    _dump_json(m.echo(), m.output_dir / "manifest.resolved.json")
    _sidecar(m.output_dir / "synth.meta.json", "synth", m)
    _print_table(rows, ("table_id", "rows", "expected_length", "histogram"))
    return 0


def _run_goal(goal: str, dist: RowDistribution, m: Manifest) -> ShardingPlan:
    cfg, topo = m.cost_model, m.topology
    if goal == "2tier":
        return plan_2tier(dist, cfg, topo)
    if goal == "3tier":
        return plan_3tier(dist, cfg, topo)
    if goal.startswith("budget:"):
        spec = goal[len("budget:") :]
        allow_flex = spec.endswith("+flex")
        budget = float(spec[: -len("+flex")] if allow_flex else spec)
        return plan_for_budget(dist, cfg, topo, budget, allow_flex=allow_flex)
    raise ManifestError(f"unknown goal {goal!r}; expected 2tier, 3tier, budget:<bytes>[+flex] or frontier")


def _write_frontier(dist: RowDistribution, m: Manifest, out: Path) -> dict[str, Any]:
    frontier = build_frontier(dist, m.cost_model, m.topology)
    points = find_points(frontier, dist, m.cost_model, m.topology)
    keep = [p.row_index for p in points.values()]
    with open(out / "frontier.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "cum_marginal_memory_bytes", "cum_marginal_comm_seconds"])
        for p in frontier.downsample(MAX_REPORT_POINTS, keep):
            w.writerow([p.row_index, repr(p.cum_marginal_memory_bytes), repr(p.cum_marginal_comm_seconds)])
    doc = {
        k: {"row_index": p.row_index, "memory_bytes": p.cum_marginal_memory_bytes, "comm_seconds": p.cum_marginal_comm_seconds}
        for k, p in points.items()
    }
    _dump_json(doc, out / "points.json")
    return doc


def cmd_plan(m: Manifest) -> int:
    dist = load_tables(m)
    out = m.output_dir
    out.mkdir(parents=True, exist_ok=True)
    points = _write_frontier(dist, m, out)
    if m.goal == "frontier":
        _sidecar(out / "plan.meta.json", "plan", m)
        _print_table(
            [(k, v["row_index"], v["memory_bytes"], v["comm_seconds"]) for k, v in points.items()],
            ("point", "row_index", "cum_memory_bytes", "cum_comm_seconds"),
        )
        return 0

    plan = _run_goal(m.goal, dist, m)
    _dump_json(plan.to_document(), out / "plan.json")
    with open(out / "assignment.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["table_id", "row_id", "tier"])
        w.writerows(assignment_rows(plan))
    cov = plan.coverage()
    with open(out / "coverage.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tier", "rows", "predicted_covered_access_fraction"])
        for tier, v in cov.items():
            w.writerow([tier, v["row_count"], repr(v["coverage_fraction"])])
        w.writerow(["additional_memory_bytes", "", repr(plan.predicted.marginal_memory_bytes)])
    _sidecar(out / "plan.meta.json", "plan", m)

    print(f"goal: {plan.goal}  dp_cut: {plan.dp_cut}  flex_cut: {plan.flex_cut}")
    _print_table(
        [(t, v["row_count"], f"{100 * v['coverage_fraction']:.2f}%") for t, v in cov.items()],
        ("tier", "rows", "covered_access"),
    )
    print(f"predicted global all-to-all reduction: {100 * plan.predicted.global_a2a_reduction:.2f}%")
    print(f"predicted additional memory per GPU: {plan.predicted.marginal_memory_bytes:.6g} bytes")
    return 0


def _load_plan(m: Manifest, plan_path: Path, dist: RowDistribution) -> ShardingPlan:
    if not plan_path.exists():
        raise ManifestError(f"plan file not found: {plan_path}")
    with open(plan_path) as fh:
        doc = json.load(fh)
    return plan_from_document(doc, dist, m.cost_model, m.topology)


def cmd_simulate(m: Manifest, plan_path: Path | None, threads: int) -> int:
    out = m.output_dir
    plan_path = plan_path or out / "plan.json"
    dist = load_tables(m)
    plan = _load_plan(m, plan_path, dist)
    baseline = baseline_rw(dist, m.cost_model, m.topology)
    workload = sample_workload(dist, m.cost_model, m.topology, m.seed, m.iterations)
    base_rep, plan_rep = simulate_plans([baseline, plan], workload, m.cost_model, m.topology, m.hash_seed, threads)

    out.mkdir(parents=True, exist_ok=True)
    _dump_json(plan_rep.to_dict(), out / "sim_report.json")
    plan_rep.write_csv(out / "sim_report.csv")
    _dump_json(base_rep.to_dict(), out / "baseline_report.json")
    base_rep.write_csv(out / "baseline_report.csv")

    disc = compare(plan.predicted, plan_rep)
    summary = {
        "predicted_global_a2a_reduction": plan.predicted.global_a2a_reduction,
        "simulated_global_a2a_reduction": plan_rep.reduction(),
        "speedup": speedup(base_rep, plan_rep, include_overlappable=True),
        "speedup_excluding_overlappable": speedup(base_rep, plan_rep, include_overlappable=False),
        "baseline_comm_seconds": base_rep.comm_seconds,
        "plan_comm_seconds": plan_rep.comm_seconds,
        "baseline_peak_memory_bytes": base_rep.mean("peak_memory_bytes"),
        "plan_peak_memory_bytes": plan_rep.mean("peak_memory_bytes"),
    }
    _write_comparison(disc, summary, out / "comparison.csv")
    _dump_json(summary, out / "summary.json")
    _sidecar(out / "simulate.meta.json", "simulate", m)

    _print_table(
        [(d.metric, d.predicted, d.observed, d.relative_error, "!" if d.flagged else "") for d in disc],
        ("metric", "predicted", "simulated", "rel_error", "flag"),
    )
    print()
    _print_table(
        [
            ("RW", base_rep.mean("global_a2a_bytes"), "", base_rep.comm_seconds, 1.0),
            (plan.goal, plan_rep.mean("global_a2a_bytes"), f"{100 * plan_rep.reduction():.2f}%",
             plan_rep.comm_seconds, summary["speedup"]),
        ],
        ("sharding", "global_a2a_bytes", "reduction", "comm_seconds", "speedup"),
    )
    print(f"speedup excluding overlappable collectives: {summary['speedup_excluding_overlappable']:.4g}x")
    return 0


def _write_comparison(disc, summary: dict[str, float] | None, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "predicted", "observed", "relative_error", "ratio", "flagged"])
        for d in disc:
            w.writerow([d.metric, repr(d.predicted), repr(d.observed), repr(d.relative_error), repr(d.ratio), int(d.flagged)])
        for k, v in (summary or {}).items():
            w.writerow([k, "", repr(v), "", "", ""])


def sim_report_from_dict(doc: dict[str, Any]) -> SimReport:
    per = {k: np.asarray(v, dtype=np.float64) for k, v in doc["per_iteration"].items()}
    return SimReport(per, doc.get("goal", ""), doc.get("coverage", {}))


def cmd_compare(m: Manifest, plan_path: Path | None, report_path: Path | None, tolerance: float) -> int:
    out = m.output_dir
    plan_path = plan_path or out / "plan.json"
    report_path = report_path or out / "sim_report.json"
    if not report_path.exists():
        raise ManifestError(f"simulation report not found: {report_path}")
    plan = _load_plan(m, plan_path, load_tables(m))
    with open(report_path) as fh:
        rep = sim_report_from_dict(json.load(fh))
    disc = compare(plan.predicted, rep, tolerance)
    out.mkdir(parents=True, exist_ok=True)
    _write_comparison(disc, None, out / "compare.csv")
    _print_table(
        [(d.metric, d.predicted, d.observed, d.relative_error, "!" if d.flagged else "") for d in disc],
        ("metric", "predicted", "simulated", "rel_error", "flag"),
    )
    return 0


def cmd_breakpoints(m: Manifest) -> int:
    bp = breakpoints(m.cost_model, m.topology)
    print(json.dumps(bp.to_dict(), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tiershard", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--manifest", required=True, type=Path, help="manifest (YAML or JSON)")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides manifest output_dir)")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("synth", help="write Zipf histograms for the manifest's synthetic tables"))
    common(sub.add_parser("plan", help="compute a sharding plan for the manifest goal"))
    p = sub.add_parser("simulate", help="replay sampled batches against a plan and the RW baseline")
    common(p)
    p.add_argument("--plan", type=Path, default=None, help="plan.json (default: <out>/plan.json)")
    p.add_argument("--threads", type=int, default=1)
    p = sub.add_parser("compare", help="predicted vs simulated discrepancy table")
    common(p)
    p.add_argument("--plan", type=Path, default=None)
    p.add_argument("--report", type=Path, default=None, help="sim_report.json (default: <out>/sim_report.json)")
    p.add_argument("--tolerance", type=float, default=0.02)
    common(sub.add_parser("breakpoints", help="print the neutral probabilities for the manifest's config"))
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        m = load_manifest(args.manifest, args.out)
        if args.command == "synth":
            return cmd_synth(m)
        if args.command == "plan":
            return cmd_plan(m)
        if args.command == "simulate":
            if args.threads < 1:
                raise ManifestError("--threads must be >= 1")
            return cmd_simulate(m, args.plan, args.threads)
        if args.command == "compare":
            return cmd_compare(m, args.plan, args.report, args.tolerance)
        if args.command == "breakpoints":
            return cmd_breakpoints(m)
    except (ManifestError, PlanError, TopologyError, ValueError, KeyError, OSError) as exc:
        logger.error("%s", exc)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
