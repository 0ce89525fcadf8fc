"""
Startup Pipeline

Cold start (parse -> allocate -> deploy), slow-TaskManager mitigation and
HotUpdate restarts onto already-held processes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..graph.expand import dedup_edge_descriptors, expand
from ..graph.models import LogicalGraph
from ..runtime.engine import NS_PER_S
from .models import ClusterModel, StartupReport

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD_NS = 120 * NS_PER_S


class StartupError(Exception):
    """Not enough TaskManagers to run the job."""

    def __init__(self, message: str, needed: int = 0, available: int = 0):
        super().__init__(message)
        self.needed = needed
        self.available = available


@dataclass
class AllocationState:
    """Snapshot of an in-progress allocation phase."""
    needed: int
    elapsed_ns: int
    pending: int
    spares_available: int


@dataclass
class MitigationActions:
    extra: int = 0
    reason: str = ""


@dataclass
class AllocationResult:
    allocate_ns: int
    registrations: list[tuple[int, str]] = field(default_factory=list)
    redundant_used: int = 0
    released: int = 0
    extra: int = 0


def mitigate_slow_tms(state: AllocationState, threshold_ns: int = DEFAULT_THRESHOLD_NS,
                      frac: float = 0.30, cap: int = 5) -> MitigationActions:
    """
    Decide how many redundant TaskManagers to provision once allocation
    overruns its threshold: min(ceil(frac * needed), cap), bounded by spares.
    """
    if state.elapsed_ns <= threshold_ns or state.pending <= 0:
        return MitigationActions(0, "not_triggered")
    extra = min(math.ceil(frac * state.needed), cap)
    if state.spares_available <= 0:
        logger.warning(f"Slow-TM mitigation wanted {extra} TMs but the spare pool is exhausted")
        return MitigationActions(0, "spares_exhausted")
    return MitigationActions(min(extra, state.spares_available), "provisioned")


def allocate(
    needed: int,
    model: ClusterModel,
    rng: np.random.Generator,
    latency_overrides: Optional[dict[int, int]] = None,
    mitigation: bool = False,
    threshold_ns: int = DEFAULT_THRESHOLD_NS,
    frac: float = 0.30,
    cap: int = 5,
) -> AllocationResult:
    """
    Request `needed` TaskManagers and wait until `needed` of them registered.

    `latency_overrides` maps a 0-based request index to its total registration
    time (stragglers). The job proceeds with the first `needed` registrations
    by time (ties by id); every other TM is released once running.
    """
    if needed == 0:
        return AllocationResult(0)
    overrides = latency_overrides or {}
    sampler = model.startup_sampler(rng)
    registrations: list[tuple[int, str]] = []
    for i in range(needed):
        if i in overrides:
            at = overrides[i]
        else:
            at = model.provision_delay_ns(i + 1) + sampler()
        registrations.append((at, f"tm-{i}"))

    extra = 0
    latest = max(at for at, _ in registrations)
    if mitigation and latest > threshold_ns:
        pending = sum(1 for at, _ in registrations if at > threshold_ns)
        actions = mitigate_slow_tms(
            AllocationState(needed, latest, pending, model.spares), threshold_ns, frac, cap)
        extra = actions.extra
        for j in range(extra):
            registrations.append((threshold_ns + sampler(), f"spare-{j}"))

    ordered = sorted(registrations, key=lambda r: (r[0], r[1]))
    chosen = ordered[:needed]
    redundant_used = sum(1 for _, tm in chosen if tm.startswith("spare-"))
    released = len(registrations) - needed
    return AllocationResult(
        allocate_ns=chosen[-1][0],
        registrations=chosen,
        redundant_used=redundant_used,
        released=released,
        extra=extra,
    )


def run_startup(
    job: LogicalGraph,
    model: ClusterModel,
    rng: np.random.Generator,
    batched: bool = True,
    mitigation: bool = False,
    threshold_ns: int = DEFAULT_THRESHOLD_NS,
    latency_overrides: Optional[dict[int, int]] = None,
    dedup: bool = True,
) -> StartupReport:
    """Cold start of `job` on a fresh cluster."""
    exec_graph = expand(job, model.slots_per_tm, dedup=dedup)
    descriptors, _ = dedup_edge_descriptors(exec_graph)
    tasks = len(exec_graph.tasks)
    needed = len(exec_graph.tm_ids)
    if needed > model.capacity_tms + (model.spares if mitigation else 0):
        raise StartupError(f"job needs {needed} TMs, cluster has {model.capacity_tms}",
                           needed=needed, available=model.capacity_tms)

    parse_ns = model.parse_ns(tasks, descriptors)
    allocation = allocate(needed, model, rng, latency_overrides, mitigation, threshold_ns)
    deploy_ns, rpc_count = model.deploy_ns(tasks, needed, batched)
    report = StartupReport(
        parse_ns=parse_ns,
        allocate_ns=allocation.allocate_ns,
        deploy_ns=deploy_ns,
        rpc_count=rpc_count,
        redundant_tms_used=allocation.redundant_used,
        released_tms=allocation.released,
        tasks=tasks,
        tms=needed,
        descriptors=descriptors,
        path="mitigated" if allocation.extra else "cold",
    )
    logger.info(f"Startup of {tasks} tasks on {needed} TMs: parse {parse_ns / 1e6:.0f} ms, "
                f"allocate {report.allocate_ns / 1e6:.0f} ms, deploy {deploy_ns / 1e6:.0f} ms")
    return report


def hot_update(
    held_tms: int,
    new_job: LogicalGraph,
    model: ClusterModel,
    rng: np.random.Generator,
    batched: bool = True,
) -> StartupReport:
    """
    Redeploy `new_job` onto the processes a running job already holds.

    Allocation is skipped when the held TMs suffice; otherwise only the
    missing TMs go through the cold allocation path.
    """
    exec_graph = expand(new_job, model.slots_per_tm)
    descriptors, _ = dedup_edge_descriptors(exec_graph)
    tasks = len(exec_graph.tasks)
    needed = len(exec_graph.tm_ids)
    delta = max(0, needed - held_tms)
    allocation = allocate(delta, model, rng) if delta else None
    deploy_ns, rpc_count = model.deploy_ns(tasks, needed, batched)
    return StartupReport(
        parse_ns=model.parse_ns(tasks, descriptors),
        allocate_ns=allocation.allocate_ns if allocation else 0,
        deploy_ns=deploy_ns,
        rpc_count=rpc_count,
        tasks=tasks,
        tms=needed,
        descriptors=descriptors,
        path="hot",
    )
