"""
Bench Module

Workload presets, run orchestration and report files, SLO verdicts,
sweeps and micro-benchmarks.
"""

from .metrics import MetricsCollector
from .microbench import COMPONENTS, run_microbench
from .models import (
    AutoscaleSummary,
    CheckpointSummary,
    LatencySummary,
    MetricsReport,
    MicrobenchReport,
    MicrobenchRow,
    RecoveryEvent,
    SloTarget,
    SloVerdict,
    StartupSummary,
)
from .runner import (
    RunResult,
    SweepResult,
    compare_reports,
    grid_cells,
    load_report,
    parse_grid,
    run,
    summary_dict,
    sweep,
)
from .simulation import AutoscaleSimulation, JobSimulation, ledger_digest
from .slo import VerdictError, evaluate_slo
from .workloads import KeyStream, RateProfile, build_feeds, build_graph, generate, zipf_cdf

__all__ = [
    "MetricsCollector",
    "COMPONENTS",
    "run_microbench",
    "AutoscaleSummary",
    "CheckpointSummary",
    "LatencySummary",
    "MetricsReport",
    "MicrobenchReport",
    "MicrobenchRow",
    "RecoveryEvent",
    "SloTarget",
    "SloVerdict",
    "StartupSummary",
    "RunResult",
    "SweepResult",
    "compare_reports",
    "grid_cells",
    "load_report",
    "parse_grid",
    "run",
    "summary_dict",
    "sweep",
    "AutoscaleSimulation",
    "JobSimulation",
    "ledger_digest",
    "VerdictError",
    "evaluate_slo",
    "KeyStream",
    "RateProfile",
    "build_feeds",
    "build_graph",
    "generate",
    "zipf_cdf",
]
