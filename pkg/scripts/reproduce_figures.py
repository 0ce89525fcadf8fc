#!/usr/bin/env python3
"""
StreamLab Scenario Reproduction

Runs the resiliency scenarios end to end and prints a summary of each:
region vs global checkpoint success, the global-success formula, the
straggler shuffle comparison, single-task vs region recovery, autoscaler
tracking, startup acceleration and the coordination HA rule table.

Usage:
    python reproduce_figures.py
    python reproduce_figures.py --only checkpoint --only straggler
    python reproduce_figures.py --quick --output results.json
"""

import argparse
import json
import sys
import time
from pathlib import Path

# Add project root to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from packages.core.bench.runner import run, summary_dict
from packages.core.bench.workloads import build_graph
from packages.core.checkpoint.merge import predict_global_success, simulate_global_success, \
    simulate_region_success
from packages.core.config import WorkloadConfig, load_run_config
from packages.core.control import (
    ClusterModel,
    CoordinationRole,
    CoordinationStore,
    LeaderRecord,
    LeaderService,
    TerminateJobs,
    hot_update,
    resolve_leader,
    run_startup,
)
from packages.core.runtime.engine import NS_PER_MS, NS_PER_S
from packages.core.seeding import RngStreams

CONFIGS = project_root / "configs"
SCENARIOS = ("checkpoint", "formula", "straggler", "recovery", "autoscale", "startup", "ha")


def parse_args() -> argparse.Namespace:
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        description="Reproduce the StreamLab resiliency scenarios.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"""
Scenarios: {", ".join(SCENARIOS)}
        """,
    )
    parser.add_argument(
        "--only",
        action="append",
        choices=SCENARIOS,
        help="Run only this scenario (repeatable)",
    )
    parser.add_argument(
        "--quick", "-q",
        action="store_true",
        help="Shorter virtual horizons (smoke run)",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=0,
        help="Base seed (default: 0)",
    )
    parser.add_argument(
        "--output", "-o",
        type=str,
        default=None,
        help="Write the collected results as JSON",
    )
    return parser.parse_args()


# ============================================================================
# Scenarios
# ============================================================================

def scenario_checkpoint(seed: int, quick: bool) -> dict:
    duration = 1200 if quick else 12000
    results = {}
    for mode in ("global", "region"):
        config = load_run_config(CONFIGS / f"ds_{mode}.json",
                                 [f"seed={seed}", f"workload.duration_s={duration}"])
        report = run(config).report
        results[mode] = {
            "attempts": report.checkpoints.attempts,
            "success_pct": round(100 * report.checkpoints.success_rate, 1),
            "region_success_pct": round(100 * report.checkpoints.region_success_rate, 1),
        }
    rng = RngStreams(seed).get("oracle")
    tasks_per_region = 2
    oracle, _ = simulate_region_success(0.05, tasks_per_region, 8, 100_000, rng)
    results["oracle_global_pct"] = round(100 * oracle, 1)
    return results


def scenario_formula(seed: int, quick: bool) -> dict:
    attempts = 2_000 if quick else 10_000
    rng = RngStreams(seed).get("oracle")
    empirical = simulate_global_success(1e-4, 10_000, attempts, rng)
    return {
        "predicted": round(predict_global_success(1e-4, 10_000), 4),
        "empirical": round(empirical, 4),
        "attempts": attempts,
    }


def scenario_straggler(seed: int, quick: bool) -> dict:
    duration = 20 if quick else 60
    results = {}
    for shuffle in ("rebalance", "backlog_aware"):
        config = load_run_config(CONFIGS / "q2_straggler.json", [
            f"seed={seed}", f"workload.duration_s={duration}", f"workload.shuffle={shuffle}"])
        report = run(config).report
        results[shuffle] = {"qps_steady": round(report.qps_steady, 1),
                            "backlog_max": report.backlog_max}
    # Eight consumers behind a round-robin wait on the 100x straggler
    results["round_robin_bound"] = 8 * (1000.0 / 100.0)
    rr = results["rebalance"]["qps_steady"]
    results["speedup"] = round(results["backlog_aware"]["qps_steady"] / rr, 2) if rr else None
    return results


def scenario_recovery(seed: int, quick: bool) -> dict:
    duration = 1200 if quick else 1800
    results = {}
    for strategy in ("region", "single_task"):
        overrides = [f"seed={seed}", f"workload.duration_s={duration}",
                     f"recovery.strategy={strategy}"]
        report = run(load_run_config(CONFIGS / "single_task.json", overrides)).report
        steady = report.qps_steady or 1.0
        results[strategy] = {
            "min_qps_pct": round(100 * report.qps_min / steady, 1),
            "recovery_s": report.max_recovery_time_s,
            "dropped": report.records_dropped,
            "duplicates": report.duplicates,
        }
    return results


def scenario_autoscale(seed: int, quick: bool) -> dict:
    overrides = [f"seed={seed}"]
    if quick:
        overrides += ["workload.duration_s=5400",
                      "workload.rate_steps=[[0,1000],[1800,4000],[3600,2000]]"]
    report = run(load_run_config(CONFIGS / "autoscale_steps.json", overrides)).report
    auto = report.autoscale
    return {
        "rounds": auto.rounds,
        "applied": auto.applied,
        "rolled_back": auto.rolled_back,
        "final_parallelism": auto.final_parallelism,
    }


def scenario_startup(seed: int, quick: bool) -> dict:
    model = ClusterModel.large_cluster()
    tms = 128 if quick else 512
    workload = WorkloadConfig(kind="q2", parallelism=tms)
    job = build_graph(workload)
    streams = RngStreams(seed)
    unbatched = run_startup(job, model, streams.derive("cluster", 0), batched=False)
    batched = run_startup(job, model, streams.derive("cluster", 0), batched=True)
    straggler = {0: 300 * NS_PER_S}
    slow = run_startup(job, model, streams.derive("cluster", 1), latency_overrides=straggler)
    mitigated = run_startup(job, model, streams.derive("cluster", 1), mitigation=True,
                            latency_overrides=straggler)
    hot = hot_update(unbatched.tms, job, model, streams.derive("cluster", 2))
    return {
        "tasks": unbatched.tasks,
        "tms": unbatched.tms,
        "unbatched": {k: v for k, v in unbatched.to_dict().items() if k.endswith("_ns")}
        | {"rpc_count": unbatched.rpc_count},
        "batched_rpc_count": batched.rpc_count,
        "deploy_ms": [unbatched.deploy_ns / NS_PER_MS, batched.deploy_ns / NS_PER_MS],
        "straggler_allocate_s": slow.allocate_ns / NS_PER_S,
        "mitigated_allocate_s": mitigated.allocate_ns / NS_PER_S,
        "released_tms": mitigated.released_tms,
        "hot_update_allocate_ns": hot.allocate_ns,
    }


def scenario_ha(seed: int, quick: bool) -> dict:
    results = {}

    service = LeaderService()
    service.elect("jm-1")
    service.check()
    service.primary.available = False
    results["primary_down"] = type(service.check()).__name__

    service.fallback.available = False
    outcome = service.check()
    results["both_down"] = outcome.reason if isinstance(outcome, TerminateJobs) else "ok"

    primary = CoordinationStore(CoordinationRole.PRIMARY, available=False)
    fallback = CoordinationStore(CoordinationRole.FALLBACK, record=LeaderRecord("jm-1", 1))
    outcome = resolve_leader(primary, fallback, cached=LeaderRecord("jm-2", 2))
    results["fallback_regression"] = outcome.reason if isinstance(outcome, TerminateJobs) \
        else "ok"

    report = run(load_run_config(CONFIGS / "ha_primary_down.json", [f"seed={seed}"])).report
    results["run_terminations"] = report.leader_terminations
    results["run_terminated"] = report.job_terminated
    return results


RUNNERS = {
    "checkpoint": scenario_checkpoint,
    "formula": scenario_formula,
    "straggler": scenario_straggler,
    "recovery": scenario_recovery,
    "autoscale": scenario_autoscale,
    "startup": scenario_startup,
    "ha": scenario_ha,
}


def check_determinism(seed: int) -> bool:
    """Same seed, same summary.json."""
    overrides = [f"seed={seed}", "workload.duration_s=10"]
    first = summary_dict(run(load_run_config(CONFIGS / "q2_straggler.json", overrides)).report)
    second = summary_dict(run(load_run_config(CONFIGS / "q2_straggler.json", overrides)).report)
    return json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)


def print_scenario_summary(name: str, result: dict, elapsed: float) -> None:
    """Print a human-readable summary of one scenario."""
    print(f"\n[{name.upper()}]  ({elapsed:.1f} s host)")
    for key, value in result.items():
        if isinstance(value, dict):
            inner = "  ".join(f"{k}={v}" for k, v in value.items())
            print(f"   {key:22} {inner}")
        else:
            print(f"   {key:22} {value}")


def main() -> int:
    """Main entry point."""
    args = parse_args()
    selected = args.only or list(SCENARIOS)

    print("=" * 60)
    print("STREAMLAB SCENARIOS")
    print("=" * 60)

    collected = {}
    try:
        for name in selected:
            start = time.perf_counter()
            result = RUNNERS[name](args.seed, args.quick)
            collected[name] = result
            print_scenario_summary(name, result, time.perf_counter() - start)

        deterministic = check_determinism(args.seed)
        collected["deterministic"] = deterministic
        print(f"\n[DETERMINISM]  identical summaries on re-run: {deterministic}")
    except Exception as e:
        print(f"Error running scenarios: {e}", file=sys.stderr)
        import traceback
        traceback.print_exc()
        return 1

    if args.output:
        Path(args.output).write_text(json.dumps(collected, indent=2, default=str) + "\n")
        print(f"\nResults saved to: {args.output}")
    print("\n" + "=" * 60)
    return 0 if collected.get("deterministic") else 1


if __name__ == "__main__":
    sys.exit(main())
