"""
SLO Evaluation

Judges a run report against (completeness class, latency bound, recovery
bound). The verdict is a pure function of its two inputs.
"""
from __future__ import annotations

import logging
from typing import Optional

from ..runtime.engine import NS_PER_MS, NS_PER_S
from .models import MetricsReport, SloTarget, SloVerdict

logger = logging.getLogger(__name__)


class VerdictError(Exception):
    """The report cannot be judged."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


def _check_report(report: MetricsReport) -> None:
    if not report.valid:
        raise VerdictError(f"report flagged invalid: {report.error or 'unknown error'}",
                           field="valid")
    for name in ("records_dropped", "created", "consumed"):
        if getattr(report, name) < 0:
            raise VerdictError(f"{name} is negative", field=name)
    if any(e.recovery_time_s < 0 for e in report.recoveries):
        raise VerdictError("negative recovery time", field="recoveries")


def evaluate_slo(report: MetricsReport, target: SloTarget) -> SloVerdict:
    """
    completeness: gamma=full needs zero dropped records; gamma=partial needs
    dropped <= max_dropped (unbounded when unset).
    latency: p99 outside recovery windows <= lambda_max.
    recovery: every recovery time <= tau_max; a terminated job or a recovery
    still pending at run end fails.
    """
    _check_report(report)
    explanation: dict[str, str] = {}

    dropped = report.records_dropped
    if target.gamma == "full":
        completeness_ok = dropped == 0
        bound = "0"
    else:
        completeness_ok = target.max_dropped is None or dropped <= target.max_dropped
        bound = "unbounded" if target.max_dropped is None else str(target.max_dropped)
    explanation["completeness"] = f"gamma={target.gamma}: dropped {dropped}, allowed {bound}"

    p99 = report.latency.p99_outside_recovery_ms
    limit_ms = target.lambda_max_ns / NS_PER_MS
    latency_ok = p99 is None or p99 <= limit_ms
    explanation["latency"] = (f"p99 outside recovery {p99:.3f} ms vs bound {limit_ms:.3f} ms"
                              if p99 is not None else "no latency samples outside recovery")

    tau_s = target.tau_max_ns / NS_PER_S
    worst = report.max_recovery_time_s
    if report.job_terminated:
        recovery_ok = False
        explanation["recovery"] = "job terminated"
    elif report.recovery_pending:
        recovery_ok = False
        explanation["recovery"] = "recovery still in progress at run end"
    else:
        recovery_ok = worst is None or worst <= tau_s
        explanation["recovery"] = (f"max recovery {worst:.3f} s vs bound {tau_s:.3f} s"
                                   if worst is not None else "no recoveries")

    verdict = SloVerdict(
        completeness_ok=completeness_ok,
        latency_ok=latency_ok,
        recovery_ok=recovery_ok,
        overall=completeness_ok and latency_ok and recovery_ok,
        explanation=explanation,
    )
    logger.debug(f"SLO verdict: {verdict.overall} ({explanation})")
    return verdict
