"""
StreamLab Command Line

Usage:
    streamlab run --config configs/ds_region.json --set checkpoint.interval_s=30
    streamlab sweep --config configs/ds_region.json --grid checkpoint.mode=global,region
    streamlab report runs/a runs/b
    streamlab microbench --component routing

Exit codes: 0 success, 1 SLO violated / sweep cell failed / malformed report,
2 configuration or usage error, 3 engine error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from packages.core.bench.microbench import COMPONENTS, run_microbench
from packages.core.bench.runner import compare_reports, parse_grid, run, sweep
from packages.core.chaos.models import PlanError
from packages.core.config import ConfigError, Settings, get_settings, load_run_config
from packages.core.graph.models import GraphError
from packages.core.recovery.models import PolicyError
from packages.core.runtime.engine import EngineError

logger = logging.getLogger("streamlab")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_ENGINE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() owns every exit code."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


# ============================================================================
# Argument Parsing
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="streamlab",
        description="Deterministic stream-processing resiliency lab.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p_run = sub.add_parser("run", help="Execute one run")
    p_run.add_argument("--config", "-c", required=True, help="Run config JSON")
    p_run.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="Dot-notation override (repeatable)")
    p_run.add_argument("--out", "-o", default=None, help="Output directory")

    p_sweep = sub.add_parser("sweep", help="Run the cartesian product of a grid")
    p_sweep.add_argument("--config", "-c", required=True, help="Base run config JSON")
    p_sweep.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                         help="Grid axis (repeatable)")
    p_sweep.add_argument("--set", dest="overrides", action="append", default=[],
                         metavar="KEY=VALUE", help="Override applied to every cell")
    p_sweep.add_argument("--parallel", "-j", type=int, default=1, help="Parallel cells")
    p_sweep.add_argument("--out", "-o", default=None, help="Output root")
    p_sweep.add_argument("--no-cache", action="store_true", help="Ignore cached cell results")

    p_report = sub.add_parser("report", help="Compare finished runs")
    p_report.add_argument("run_dirs", nargs="*", help="Run directories")
    p_report.add_argument("--out", "-o", default=None, help="Write comparison.csv here")

    p_micro = sub.add_parser("microbench", help="Host-time micro-benchmarks")
    p_micro.add_argument("--component", action="append", choices=COMPONENTS, default=None,
                         help="Component to measure (repeatable; default all)")
    p_micro.add_argument("--repetitions", type=int, default=5)
    p_micro.add_argument("--out", "-o", default=None, help="Write microbench.json here")
    return parser


def _out_dir(explicit: Optional[str], settings: Settings, config_out: Optional[str],
             name: str) -> Path:
    if explicit:
        return Path(explicit)
    if config_out:
        return Path(config_out)
    return Path(settings.out) / name


# ============================================================================
# Commands
# ============================================================================

def cmd_run(args: argparse.Namespace, settings: Settings) -> int:
    config = load_run_config(args.config, args.overrides)
    out = _out_dir(args.out, settings, config.out_dir, Path(args.config).stem)
    result = run(config, out, settings)
    report = result.report
    if not report.valid:
        print(f"Engine error: {report.error} (partial report in {out})", file=sys.stderr)
        return EXIT_ENGINE
    print(f"Run complete: {out}")
    print(f"  consumed at sinks: {report.terminal_consumed}  dropped: {report.records_dropped}")
    print(f"  checkpoints: {report.checkpoints.succeeded}/{report.checkpoints.attempts}  "
          f"recoveries: {len(report.recoveries)}")
    if result.verdict is not None:
        status = "ok" if result.verdict.overall else "VIOLATED"
        print(f"  SLO: {status}")
        for check, text in sorted(result.verdict.explanation.items()):
            print(f"    {check}: {text}")
    return EXIT_OK if result.ok else EXIT_FAILED


def cmd_sweep(args: argparse.Namespace, settings: Settings) -> int:
    grid = parse_grid(args.grid)
    out = _out_dir(args.out, settings, None, f"sweep-{Path(args.config).stem}")
    result = sweep(args.config, grid, out, overrides=args.overrides, parallel=args.parallel,
                   use_cache=not args.no_cache, settings=settings)
    print(result.table.to_string(index=False))
    print(f"\n{len(result.cells)} cells, {result.failed} failed; summary in {out}")
    return EXIT_OK if result.ok else EXIT_FAILED


def cmd_report(args: argparse.Namespace, settings: Settings) -> int:
    if not args.run_dirs:
        raise UsageError("report needs at least one run directory")
    table, malformed = compare_reports(args.run_dirs)
    if not table.empty and len(table.columns):
        print(table.to_string())
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        table.to_csv(Path(args.out) / "comparison.csv")
    return EXIT_FAILED if malformed else EXIT_OK


def cmd_microbench(args: argparse.Namespace, settings: Settings) -> int:
    report = run_microbench(args.component, repetitions=args.repetitions)
    payload = report.model_dump(mode="json")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "microbench.json").write_text(json.dumps(payload, indent=2) + "\n")
    for row in report.rows:
        print(f"{row.component:12} {row.case:16} {row.mean:14.1f} {row.unit:12} cv={row.cv:.3f}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "microbench": cmd_microbench,
}


def main(argv: Optional[list[str]] = None) -> int:
    load_dotenv()
    settings = get_settings()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else getattr(logging, settings.log_level.upper(),
                                                         logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, settings)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, GraphError, PlanError, PolicyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except EngineError as e:
        print(f"engine error: {e}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
