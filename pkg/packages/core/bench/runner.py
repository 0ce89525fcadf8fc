"""
Experiment Runner

Single runs with their report files, cartesian sweeps (parallel, cached by
configuration digest) and cross-run comparison tables.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import pandas as pd
from diskcache import Cache
from pydantic import ValidationError

from ..config import (
    ConfigError,
    RunConfig,
    Settings,
    dump_run_config,
    get_settings,
    load_run_config,
    validate_run_config,
)
from .models import MetricsReport, SloTarget, SloVerdict
from .simulation import AutoscaleSimulation, JobSimulation
from .slo import evaluate_slo

logger = logging.getLogger(__name__)

FLOAT_DIGITS = 6


# ============================================================================
# Single Runs
# ============================================================================

@dataclass
class RunResult:
    report: MetricsReport
    verdict: Optional[SloVerdict] = None
    out_dir: Optional[Path] = None

    @property
    def ok(self) -> bool:
        return self.report.valid and (self.verdict is None or self.verdict.overall)


def round_floats(value: Any, digits: int = FLOAT_DIGITS) -> Any:
    if isinstance(value, float):
        return round(value, digits)
    if isinstance(value, dict):
        return {k: round_floats(v, digits) for k, v in value.items()}
    if isinstance(value, list):
        return [round_floats(v, digits) for v in value]
    return value


def summary_dict(report: MetricsReport) -> dict[str, Any]:
    """summary.json content: sorted keys, rounded floats, no host-dependent fields."""
    return round_floats(report.model_dump(mode="json"))


def _dump(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _dump_lines(path: Path, lines: list[dict[str, Any]]) -> None:
    path.write_text("".join(json.dumps(round_floats(line), sort_keys=True) + "\n"
                            for line in lines))


def run(config: RunConfig, out_dir: Optional[Union[str, Path]] = None,
        settings: Optional[Settings] = None) -> RunResult:
    """
    Execute one run and, when `out_dir` is given, write its report files.

    An engine error yields a report flagged invalid and no verdict.
    """
    settings = settings or get_settings()
    if config.autoscale.enabled:
        sim: Union[JobSimulation, AutoscaleSimulation] = AutoscaleSimulation(config)
    else:
        sim = JobSimulation(config, settings)
    report = sim.run()

    verdict = None
    if config.slo is not None and report.valid:
        verdict = evaluate_slo(report, SloTarget.from_config(config.slo))
        if not verdict.overall:
            logger.warning(f"SLO violated: {verdict.explanation}")

    result = RunResult(report, verdict)
    if out_dir is not None:
        result.out_dir = write_run(Path(out_dir), config, sim, report, verdict)
    return result


def write_run(out_dir: Path, config: RunConfig, sim: Union[JobSimulation, AutoscaleSimulation],
              report: MetricsReport, verdict: Optional[SloVerdict]) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump(out_dir / "resolved_config.json", dump_run_config(config))
    _dump(out_dir / "summary.json", summary_dict(report))
    if verdict is not None:
        _dump(out_dir / "verdict.json", verdict.model_dump(mode="json"))

    series = sim.series()
    series.to_csv(out_dir / "series.csv", index=False)
    _dump_lines(out_dir / "metrics.jsonl", series.to_dict("records"))

    if isinstance(sim, JobSimulation):
        _dump_lines(out_dir / "checkpoints.jsonl", sim.checkpoint_lines())
        _dump_lines(out_dir / "recovery.jsonl", sim.recovery_lines())
        _dump(out_dir / "ledger.json", {str(k): v for k, v in sorted(report.output_ledger.items())})
    else:
        sim.rounds().to_csv(out_dir / "rounds.csv", index=False)
    logger.info(f"Report written to {out_dir}")
    return out_dir


# ============================================================================
# Sweeps
# ============================================================================

def parse_grid(items: list[str]) -> dict[str, list[Any]]:
    """``--grid checkpoint.mode=global,region`` -> {"checkpoint.mode": ["global", "region"]}."""
    grid: dict[str, list[Any]] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"grid entry must look like key=v1,v2, got {item!r}", location=item)
        key, raw = item.split("=", 1)
        values = []
        for token in raw.split(","):
            try:
                values.append(json.loads(token))
            except json.JSONDecodeError:
                values.append(token)
        grid[key.strip()] = values
    return grid


def grid_cells(grid: dict[str, list[Any]]) -> list[dict[str, Any]]:
    """Cartesian product of the grid; an empty grid is one empty cell."""
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def config_digest(config: RunConfig) -> str:
    tree = dump_run_config(config)
    tree.pop("out_dir", None)
    return hashlib.sha256(json.dumps(tree, sort_keys=True).encode()).hexdigest()


@dataclass
class SweepResult:
    table: pd.DataFrame
    failed: int = 0
    cells: list[dict[str, Any]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failed == 0


def _run_cell(tree: dict[str, Any], out_dir: str) -> dict[str, Any]:
    """Worker entry point; takes and returns plain data so it pickles."""
    config = validate_run_config(tree)
    result = run(config, out_dir)
    return {
        "summary": summary_dict(result.report),
        "verdict": result.verdict.model_dump(mode="json") if result.verdict else None,
    }


def _row(index: int, cell: dict[str, Any], outcome: dict[str, Any], status: str,
         cached: bool) -> dict[str, Any]:
    summary = outcome.get("summary") or {}
    checkpoints = summary.get("checkpoints") or {}
    verdict = outcome.get("verdict")
    return {
        "cell": index,
        **{k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in cell.items()},
        "status": status,
        "cached": cached,
        # cache hits restore summary, config and verdict only; no series or ledgers
        "summary_only": cached,
        "qps_mean": summary.get("qps_mean"),
        "qps_steady": summary.get("qps_steady"),
        "ckpt_success_pct": round(100 * checkpoints.get("success_rate", 0.0), 2)
        if checkpoints else None,
        "region_success_pct": round(100 * checkpoints.get("region_success_rate", 0.0), 2)
        if checkpoints else None,
        "max_recovery_s": summary.get("max_recovery_time_s"),
        "records_dropped": summary.get("records_dropped"),
        "slo_ok": verdict.get("overall") if verdict else None,
    }


def sweep(
    config_path: Union[str, Path],
    grid: dict[str, list[Any]],
    out_root: Union[str, Path],
    overrides: Optional[list[str]] = None,
    parallel: int = 1,
    use_cache: bool = True,
    settings: Optional[Settings] = None,
) -> SweepResult:
    """
    Run every cell of `grid` as an independent run under ``out_root/cell-NNN``.

    Cells found in the cache are not re-run: their directory gets
    summary.json, resolved_config.json and verdict.json (when the config has
    an SLO), and the row is flagged ``summary_only``.

    All cells are validated before any runs (ConfigError on a bad key).
    A crashing cell is recorded and the sweep continues.
    """
    settings = settings or get_settings()
    out_root = Path(out_root)
    cells = grid_cells(grid)
    configs: list[RunConfig] = []
    for cell in cells:
        cell_overrides = [f"{k}={json.dumps(v)}" for k, v in cell.items()]
        configs.append(load_run_config(config_path, list(overrides or []) + cell_overrides))

    cache = Cache(settings.cache_dir) if use_cache else None
    rows: list[Optional[dict[str, Any]]] = [None] * len(cells)
    pending: dict[int, tuple[dict[str, Any], str]] = {}
    for i, (cell, config) in enumerate(zip(cells, configs)):
        cell_dir = out_root / f"cell-{i:03d}"
        key = config_digest(config)
        cached = cache.get(key) if cache is not None else None
        if cached is not None:
            logger.debug(f"Cache hit for cell {i}")
            cell_dir.mkdir(parents=True, exist_ok=True)
            _dump(cell_dir / "summary.json", cached["summary"])
            _dump(cell_dir / "resolved_config.json", dump_run_config(config))
            if cached.get("verdict") is not None:
                _dump(cell_dir / "verdict.json", cached["verdict"])
            rows[i] = _row(i, cell, cached, _status(cached), cached=True)
            continue
        pending[i] = (dump_run_config(config), str(cell_dir))

    def record(i: int, outcome: Optional[dict[str, Any]], error: Optional[Exception]) -> None:
        if error is not None:
            logger.error(f"Sweep cell {i} failed: {error}")
            rows[i] = _row(i, cells[i], {}, f"failed: {type(error).__name__}", cached=False)
            return
        rows[i] = _row(i, cells[i], outcome, _status(outcome), cached=False)
        if cache is not None and outcome["summary"].get("valid"):
            cache.set(config_digest(configs[i]), outcome)

    if parallel > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = {i: pool.submit(_run_cell, tree, d) for i, (tree, d) in pending.items()}
            for i, future in futures.items():
                try:
                    record(i, future.result(), None)
                except Exception as e:
                    record(i, None, e)
    else:
        for i, (tree, cell_dir) in pending.items():
            try:
                record(i, _run_cell(tree, cell_dir), None)
            except Exception as e:
                record(i, None, e)

    table = pd.DataFrame(rows)
    failed = sum(1 for s in table.get("status", []) if s == "invalid" or s.startswith("failed"))
    out_root.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_root / "sweep.csv", index=False)
    (out_root / "sweep.txt").write_text(table.to_string(index=False) + "\n")
    logger.info(f"Sweep of {len(cells)} cells finished, {failed} failed")
    return SweepResult(table, failed, cells)


def _status(outcome: dict[str, Any]) -> str:
    summary = outcome.get("summary") or {}
    if not summary.get("valid", False):
        return "invalid"
    verdict = outcome.get("verdict")
    if verdict is not None and not verdict.get("overall"):
        return "slo_violated"
    return "ok"


# ============================================================================
# Comparison Reports
# ============================================================================

COMPARISON_METRICS = (
    "qps_mean",
    "qps_min",
    "ckpt_success_pct",
    "region_success_pct",
    "recoveries",
    "max_recovery_s",
    "mean_recovery_s",
    "records_dropped",
)


def load_report(run_dir: Union[str, Path]) -> MetricsReport:
    """Read a run's summary.json; raises ValueError when missing or malformed."""
    path = Path(run_dir) / "summary.json"
    try:
        return MetricsReport.model_validate(json.loads(path.read_text()))
    except FileNotFoundError as e:
        raise ValueError(f"{path} not found") from e
    except (json.JSONDecodeError, ValidationError) as e:
        raise ValueError(f"{path} is malformed: {e}") from e


def _metrics_of(report: MetricsReport) -> dict[str, Any]:
    times = [e.recovery_time_s for e in report.recoveries]
    return {
        "qps_mean": round(report.qps_mean, 3),
        "qps_min": round(report.qps_min, 3),
        "ckpt_success_pct": round(100 * report.checkpoints.success_rate, 1),
        "region_success_pct": round(100 * report.checkpoints.region_success_rate, 1),
        "recoveries": len(times),
        "max_recovery_s": round(max(times), 3) if times else None,
        "mean_recovery_s": round(sum(times) / len(times), 3) if times else None,
        "records_dropped": report.records_dropped,
    }


def compare_reports(run_dirs: list[Union[str, Path]]) -> tuple[pd.DataFrame, int]:
    """
    One column per readable run, one row per metric.

    Returns the table and the number of malformed directories skipped.
    """
    columns: dict[str, dict[str, Any]] = {}
    malformed = 0
    for run_dir in run_dirs:
        try:
            report = load_report(run_dir)
        except ValueError as e:
            logger.warning(f"Skipping {run_dir}: {e}")
            malformed += 1
            continue
        name = Path(run_dir).name or str(run_dir)
        if name in columns:
            name = str(run_dir)
        columns[name] = _metrics_of(report)
    table = pd.DataFrame(columns, index=list(COMPARISON_METRICS))
    table.index.name = "metric"
    return table, malformed
