"""Command-line front door: single runs, batch sweeps, replay, benchmark.

Outputs land in the --out directory: line-delimited episode records
(.jsonl) or flat CSV per run, metrics.csv with one row per run,
aggregate.json per batch, and rendered figures next to the data.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .costs import CostParams
from .dynamics import VesselParams, VesselState
from .engine import (
    MODES,
    EpisodeLog,
    RunMetrics,
    ScenarioError,
    TickRecord,
    randomize_scenario,
    run_episode,
)
from .planner import MppiPlanner, PlannerParams
from .scenario import parse_scenario, scenario_fingerprint, serialize_scenario
from .world import open_basin

CSV_COLUMNS = [
    "time_s", "agent_id", "x_m", "y_m", "heading_rad",
    "surge_m_s", "sway_m_s", "yaw_rate_rad_s",
    "f1_n", "f2_n", "f3_n", "f4_n",
    "goal_x_m", "goal_y_m", "violations", "collision",
]


@dataclass
class ExperimentSpec:
    scenario_path: str
    runs: int = 1
    seed_base: int = 0
    modes: list = field(default_factory=lambda: ["dec_nocomm"])
    out_dir: str = "results"
    jobs: int = 1
    workers: int = 1
    plot: bool = False

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        for mode in self.modes:
            if mode not in MODES:
                raise ValueError(f"unknown mode {mode!r}")


@dataclass
class AggregateReport:
    runs: int
    per_mode: dict  # mode -> summary dict
    failed_runs: list = field(default_factory=list)


def _row_values(rec: TickRecord, aid: str):
    state = [float(v) for v in rec.states[aid]]
    inp = [float(v) for v in rec.inputs.get(aid, np.zeros(4))]
    goal = rec.goals.get(aid, (math.nan, math.nan))
    kinds = ";".join(f"{i}>{j}:{kind}" for (i, j, kind) in rec.violations if i == aid)
    collided = any(aid in hit[:-1] for hit in rec.collisions)
    return [float(rec.time_s), aid, *state, *inp,
            float(goal[0]), float(goal[1]), kinds, int(collided)]


def export_episode(log: EpisodeLog, fmt: str, path) -> Path:
    """Write an episode as line-delimited records or flat CSV.

    One data row per tick and agent; floats keep full round-trip
    precision (repr), units are encoded in the column names.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for rec in log.ticks:
                for aid in sorted(rec.states):
                    writer.writerow([repr(v) if isinstance(v, float) else v
                                     for v in _row_values(rec, aid)])
    elif fmt == "records":
        with path.open("w") as fh:
            for rec in log.ticks:
                for aid in sorted(rec.states):
                    values = _row_values(rec, aid)
                    row = dict(zip(CSV_COLUMNS, values))
                    planned = rec.planned.get(aid)
                    if planned is not None:
                        row["planned_xy_m"] = np.asarray(planned, float).tolist()
                    if rec.diag.get(aid):
                        row["planner"] = rec.diag[aid]
                    row["tick"] = rec.tick
                    fh.write(json.dumps(row) + "\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}; use 'records' or 'csv'")
    return path


def read_episode_csv(path):
    """Reimport a CSV export; numeric fields come back as floats."""
    rows = []
    with Path(path).open() as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            parsed = dict(row)
            for key in CSV_COLUMNS:
                if key in ("agent_id", "violations"):
                    continue
                parsed[key] = float(row[key])
            rows.append(parsed)
    return rows


def metrics_to_row(metrics: RunMetrics, mode: str, seed: int, fingerprint: str) -> dict:
    plan_ms = metrics.plan_wall_times_ms
    return {
        "mode": mode,
        "seed": seed,
        "scenario_hash": fingerprint[:16],
        "outcome": metrics.outcome,
        "violations": metrics.rule_violation_events,
        "time_s": metrics.time_to_completion,
        "total_distance_m": metrics.total_distance,
        "plan_ms_mean": statistics.fmean(plan_ms) if plan_ms else 0.0,
        "plan_ms_max": max(plan_ms) if plan_ms else 0.0,
    }


def _run_single(scenario_path: str, mode: str, seed: int, out_dir: str,
                workers: int, log_format: str = "records", plot: bool = False):
    """One randomized episode; importable top-level for process pools."""
    scenario = parse_scenario(scenario_path)
    scenario = replace(scenario, mode=mode)
    randomized = randomize_scenario(scenario, seed)
    metrics, log = run_episode(randomized, seed=seed, workers=workers)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"episode_{mode}_{seed}"
    export_episode(log, log_format, out / f"{stem}.jsonl"
                   if log_format == "records" else out / f"{stem}.csv")
    if plot:
        from .viz import plot_episode
        plot_episode(log, randomized, out / f"{stem}.png",
                     title=f"{mode} seed {seed}: {metrics.outcome}")
    return metrics_to_row(metrics, mode, seed, scenario_fingerprint(randomized))


def run_batch(spec: ExperimentSpec) -> AggregateReport:
    """Seeded episode sweep; seeds repeat across modes for pairing."""
    jobs = []
    for mode in spec.modes:
        for i in range(spec.runs):
            jobs.append((mode, spec.seed_base + i))

    rows = []
    failed = []
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            futures = {
                pool.submit(_run_single, spec.scenario_path, mode, seed,
                            spec.out_dir, spec.workers, "records", spec.plot):
                (mode, seed) for mode, seed in jobs
            }
            for future, (mode, seed) in futures.items():
                try:
                    rows.append(future.result())
                except Exception as exc:  # noqa: BLE001 - surface per-run failures
                    failed.append({"mode": mode, "seed": seed, "error": str(exc)})
    else:
        for mode, seed in jobs:
            try:
                rows.append(_run_single(spec.scenario_path, mode, seed,
                                        spec.out_dir, spec.workers, "records",
                                        spec.plot))
            except Exception as exc:  # noqa: BLE001
                failed.append({"mode": mode, "seed": seed, "error": str(exc)})

    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if rows:
        with (out / "metrics.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(sorted(rows, key=lambda r: (r["mode"], r["seed"])))

    per_mode = {}
    for mode in spec.modes:
        mode_rows = [r for r in rows if r["mode"] == mode]
        ok = [r for r in mode_rows if r["outcome"] == "success"]
        plan_means = [r["plan_ms_mean"] for r in mode_rows if r["plan_ms_mean"] > 0]
        per_mode[mode] = {
            "runs": len(mode_rows),
            "successes": len(ok),
            "deadlocks": sum(r["outcome"] == "deadlock" for r in mode_rows),
            "collisions": sum(r["outcome"] == "collision" for r in mode_rows),
            "violations": int(sum(r["violations"] for r in mode_rows)),
            "mean_time_s": statistics.fmean([r["time_s"] for r in ok]) if ok else None,
            "mean_total_distance_m":
                statistics.fmean([r["total_distance_m"] for r in ok]) if ok else None,
            "plan_ms_mean": statistics.fmean(plan_means) if plan_means else None,
            "plan_ms_std": statistics.pstdev(plan_means) if len(plan_means) > 1 else 0.0,
            "times_s": [r["time_s"] for r in ok],
            "scenario_hashes": sorted({r["scenario_hash"] for r in mode_rows}),
        }
    report = AggregateReport(runs=spec.runs, per_mode=per_mode, failed_runs=failed)
    (out / "aggregate.json").write_text(json.dumps(
        {"runs": spec.runs, "per_mode": per_mode, "failed_runs": failed}, indent=2))
    if spec.plot and rows:
        from .viz import plot_batch_summary
        plot_batch_summary(per_mode, out / "summary.png")
    return report


# ---------------------------------------------------------------------------
# benchmark: plan-call scaling with agent count

def benchmark_plan_times(n_agents: int, calls: int = 50, samples: int = 2000,
                         horizon: int = 100, seed: int = 0, workers: int = 1) -> dict:
    """Time repeated plan calls with n agents arranged in one interaction group."""
    grid = open_basin(80.0, 80.0, resolution_m=0.25)
    center = 37.0
    radius = 7.0
    angles = np.linspace(0.0, 2 * math.pi, n_agents, endpoint=False)
    states, goals, vessels = {}, {}, {}
    for i, ang in enumerate(angles):
        aid = f"v{i}"
        states[aid] = VesselState(x=center + radius * math.cos(ang),
                                  y=center + radius * math.sin(ang),
                                  heading=ang + math.pi, surge=1.0)
        goals[aid] = (center - (radius + 20) * math.cos(ang),
                      center - (radius + 20) * math.sin(ang))
        vessels[aid] = VesselParams()
    params = PlannerParams(samples=samples, horizon=horizon, seed=seed)
    planner = MppiPlanner(grid, params, CostParams(), vessels, workers=workers)
    planner.plan(states, goals)  # warm-up: costs of compilation excluded
    times = []
    for _ in range(calls):
        t0 = time.perf_counter()
        planner.plan(states, goals)
        times.append((time.perf_counter() - t0) * 1e3)
    planner.close()
    return {
        "agents": n_agents,
        "calls": calls,
        "samples": samples,
        "mean_ms": statistics.fmean(times),
        "std_ms": statistics.pstdev(times),
        "min_ms": min(times),
        "max_ms": max(times),
    }


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canalmppi",
        description="Multi-vessel sampling-based planner and canal simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one episode")
    run_p.add_argument("--scenario", required=True)
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--mode", choices=MODES, default=None,
                       help="override the scenario's controller mode")
    run_p.add_argument("--out", default="results")
    run_p.add_argument("--format", choices=("records", "csv"), default="records")
    run_p.add_argument("--plot", action="store_true",
                       help="render the trajectory figure next to the log")
    run_p.add_argument("--workers", type=int, default=None)
    run_p.add_argument("--serve", metavar="HOST:PORT", default=None,
                       help="publish live frames and accept teleop commands")
    run_p.add_argument("--realtime", action="store_true",
                       help="pace the simulation at wall-clock rate")

    batch_p = sub.add_parser("batch", help="seeded multi-run sweep")
    batch_p.add_argument("--scenario", required=True)
    batch_p.add_argument("--runs", type=int, default=20)
    batch_p.add_argument("--seed", type=int, default=0, help="seed base")
    batch_p.add_argument("--mode", choices=MODES, action="append", default=None,
                         help="mode(s) to sweep; repeatable")
    batch_p.add_argument("--out", default="results")
    batch_p.add_argument("--jobs", type=int, default=1,
                         help="parallel episode processes")
    batch_p.add_argument("--workers", type=int, default=1)
    batch_p.add_argument("--plot", action="store_true")

    replay_p = sub.add_parser("replay", help="stream a recorded episode")
    replay_p.add_argument("--log", required=True, help="records (.jsonl) export")
    replay_p.add_argument("--scenario", required=True,
                          help="scenario file that produced the log (for the map)")
    replay_p.add_argument("--serve", metavar="HOST:PORT", required=True)
    replay_p.add_argument("--rate", type=float, default=1.0,
                          help="playback speed factor")

    bench_p = sub.add_parser("benchmark", help="plan-call timing vs agent count")
    bench_p.add_argument("--agents", type=int, action="append", default=None,
                         help="agent count(s); repeatable")
    bench_p.add_argument("--calls", type=int, default=50)
    bench_p.add_argument("--samples", type=int, default=2000)
    bench_p.add_argument("--out", default=None)
    bench_p.add_argument("--workers", type=int, default=1)
    bench_p.add_argument("--plot", action="store_true")
    return parser


def _parse_endpoint(text: str):
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_run(args) -> int:
    scenario = parse_scenario(args.scenario)
    if args.mode:
        scenario = replace(scenario, mode=args.mode)
    randomized = randomize_scenario(scenario, args.seed)

    bridge = None
    teleop_source = None
    frame_sink = None
    if args.serve:
        from .bridge import BridgeServer
        host, port = _parse_endpoint(args.serve)
        bridge = BridgeServer(
            host, port, grid=randomized.grid,
            controllers={a.id: a.controller for a in randomized.agents},
            vessels={a.id: (randomized.vessel_of(a).length,
                            randomized.vessel_of(a).width)
                     for a in randomized.agents})
        bridge.start()
        teleop_source = bridge.teleop_command
        frame_sink = bridge.publish_tick
        print(f"serving frames on ws://{bridge.host}:{bridge.port}")

    try:
        metrics, log = run_episode(randomized, seed=args.seed,
                                   teleop_source=teleop_source,
                                   frame_sink=frame_sink,
                                   realtime=args.realtime or bridge is not None,
                                   workers=args.workers)
    finally:
        if bridge:
            bridge.stop()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"episode_{randomized.mode}_{args.seed}"
    suffix = "jsonl" if args.format == "records" else "csv"
    path = export_episode(log, args.format, out / f"{stem}.{suffix}")
    row = metrics_to_row(metrics, randomized.mode, args.seed,
                         scenario_fingerprint(randomized))
    (out / f"{stem}.metrics.json").write_text(json.dumps(row, indent=2))
    if args.plot:
        from .viz import plot_episode
        plot_episode(log, randomized, out / f"{stem}.png",
                     title=f"{randomized.mode} seed {args.seed}: {metrics.outcome}")
    print(json.dumps(row, indent=2))
    print(f"log written to {path}")
    return 0


def cmd_batch(args) -> int:
    spec = ExperimentSpec(
        scenario_path=args.scenario,
        runs=args.runs,
        seed_base=args.seed,
        modes=args.mode or [parse_scenario(args.scenario).mode],
        out_dir=args.out,
        jobs=args.jobs,
        workers=args.workers,
        plot=args.plot,
    )
    report = run_batch(spec)
    for mode, summary in report.per_mode.items():
        mean_t = summary["mean_time_s"]
        print(f"{mode}: {summary['successes']}-{summary['deadlocks']}-"
              f"{summary['collisions']}  violations={summary['violations']}  "
              f"mean_time={mean_t:.2f}s" if mean_t is not None else
              f"{mode}: {summary['successes']}-{summary['deadlocks']}-"
              f"{summary['collisions']}  violations={summary['violations']}")
    if report.failed_runs:
        for failure in report.failed_runs:
            print(f"FAILED {failure['mode']} seed {failure['seed']}: "
                  f"{failure['error']}", file=sys.stderr)
        return 1
    return 0


def cmd_replay(args) -> int:
    from .bridge import BridgeServer, replay_records
    scenario = parse_scenario(args.scenario)
    host, port = _parse_endpoint(args.serve)
    bridge = BridgeServer(host, port, grid=scenario.grid)
    bridge.start()
    print(f"replaying {args.log} on ws://{bridge.host}:{bridge.port}")
    try:
        replay_records(args.log, bridge, scenario.control_period_s / args.rate)
    finally:
        bridge.stop()
    return 0


def cmd_benchmark(args) -> int:
    counts = args.agents or [2, 3, 4]
    results = []
    for n in counts:
        result = benchmark_plan_times(n, calls=args.calls, samples=args.samples,
                                      workers=args.workers)
        results.append(result)
        print(f"{n} agents: {result['mean_ms']:.1f} +/- {result['std_ms']:.1f} ms "
              f"({args.calls} calls, K={args.samples})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "benchmark.json").write_text(json.dumps(results, indent=2))
        if args.plot:
            from .viz import plot_benchmark
            plot_benchmark(results, out / "benchmark.png")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "batch":
            return cmd_batch(args)
        if args.command == "replay":
            return cmd_replay(args)
        if args.command == "benchmark":
            return cmd_benchmark(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
