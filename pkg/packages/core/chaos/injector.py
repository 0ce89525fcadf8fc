"""
Fault Injection

Arms a validated plan on a running simulation: selectors are resolved at arm
time (random ones from the chaos stream, in plan order), every fault becomes
an engine event, and a fault that expires gives back only its own
effect: overlapping faults on one target are recomputed from the target's
base value and the faults still active.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Optional, Protocol

import numpy as np

from ..graph.models import TaskId
from .models import FaultKind, FaultPlan, FaultSpec

if TYPE_CHECKING:
    from ..checkpoint.store import SnapshotStore
    from ..recovery.executor import RecoveryManager
    from ..runtime.channel import Channel
    from ..runtime.dataflow import Dataflow
    from ..runtime.engine import Engine
    from ..runtime.task import Cluster

logger = logging.getLogger(__name__)


class ChaosTarget(Protocol):
    engine: "Engine"
    dataflow: "Dataflow"
    cluster: "Cluster"
    store: "SnapshotStore"
    recovery: "RecoveryManager"
    chaos_rng: np.random.Generator


def _tms_hosting(sim: ChaosTarget, predicate) -> list[str]:
    return sorted({t.tm_id for t in sim.dataflow.tasks.values() if predicate(t.id)},
                  key=_tm_order)


def _tm_order(tm_id: str) -> tuple[int, str]:
    suffix = tm_id.rsplit("-", 1)[-1]
    return (int(suffix), tm_id) if suffix.isdigit() else (1 << 30, tm_id)


def resolve_tm(sim: ChaosTarget, target: Any) -> Optional[str]:
    if target == "random":
        alive = sorted(sim.cluster.hosting_ids(), key=_tm_order)
        return alive[int(sim.chaos_rng.integers(len(alive)))] if alive else None
    if isinstance(target, str):
        return target if target in sim.cluster.tms else None
    if isinstance(target, dict):
        op = target.get("hosts")
        index = target.get("subtask")
        hosts = _tms_hosting(sim, lambda t: (op is None or t.operator == op)
                             and (index is None or t.index == index))
        return hosts[0] if hosts else None
    return None


def resolve_task(sim: ChaosTarget, target: Any) -> Optional[TaskId]:
    tasks = list(sim.dataflow.tasks)
    if target == "random":
        return tasks[int(sim.chaos_rng.integers(len(tasks)))] if tasks else None
    if isinstance(target, str):
        return next((t for t in tasks if str(t) == target), None)
    if isinstance(target, dict):
        if "task" in target:
            return next((t for t in tasks if str(t) == target["task"]), None)
        op = target.get("hosts")
        index = target.get("subtask")
        matches = [t for t in tasks if (op is None or t.operator == op)
                   and (index is None or t.index == index)]
        return matches[0] if matches else None
    return None


def resolve_channels(sim: ChaosTarget, target: Any) -> list["Channel"]:
    channels = sim.dataflow.channels
    if target is None or target == "all":
        return list(channels)
    if target == "random":
        return [channels[int(sim.chaos_rng.integers(len(channels)))]] if channels else []
    if isinstance(target, dict):
        edge = target.get("edge")
        src = target.get("from")
        dst = target.get("to")
        return [c for c in channels
                if (edge is None or c.edge == edge)
                and (src is None or c.producer.operator == src)
                and (dst is None or c.consumer.operator == dst)]
    return []


def arm(plan: FaultPlan, sim: ChaosTarget) -> int:
    """Schedule every fault of `plan`; returns the number scheduled."""
    scheduled = 0
    overlays = FaultOverlays()
    for spec in plan.faults:
        resolved = _resolve(spec, sim)
        if resolved is None:
            logger.warning(f"Fault {spec.kind.value} at {spec.at} ns: selector "
                           f"{spec.target!r} resolves to nothing, skipped")
            continue
        sim.engine.at(max(spec.at, sim.engine.now), _inject, sim, spec, resolved, overlays)
        scheduled += 1
    logger.info(f"Armed {scheduled} of {len(plan.faults)} faults")
    return scheduled


def _resolve(spec: FaultSpec, sim: ChaosTarget) -> Any:
    kind = spec.kind
    if kind in (FaultKind.KILL_TM, FaultKind.CPU_SLOW):
        return resolve_tm(sim, spec.target)
    if kind == FaultKind.KILL_TASK:
        return resolve_task(sim, spec.target)
    if kind == FaultKind.NET_DELAY:
        channels = resolve_channels(sim, spec.target)
        return channels or None
    return True


# ============================================================================
# Overlapping faults
# ============================================================================

@dataclass
class _Overlay:
    base: Any
    active: dict[int, Any] = field(default_factory=dict)


class FaultOverlays:
    """
    Active duration-bounded faults per target.

    A fault starting on an idle target records the current value as the
    base. Every start and expiry recomputes the effective value from the base
    and the faults still active, so overlapping faults may expire in any
    order and the base comes back when the last one ends.
    """

    def __init__(self) -> None:
        self._overlays: dict[tuple[str, int], _Overlay] = {}
        self._tokens = 0

    def start(self, kind: str, target: Any, base: Any, contribution: Any) -> tuple[tuple, int]:
        key = (kind, id(target))
        overlay = self._overlays.setdefault(key, _Overlay(base))
        if not overlay.active:
            overlay.base = base
        token = self._tokens
        self._tokens += 1
        overlay.active[token] = contribution
        return key, token

    def end(self, key: tuple, token: int) -> None:
        self._overlays[key].active.pop(token, None)

    def view(self, key: tuple) -> tuple[Any, list[Any]]:
        """Base value and the active contributions in start order."""
        overlay = self._overlays[key]
        return overlay.base, list(overlay.active.values())


def _apply_store_slow(store: "SnapshotStore", overlays: FaultOverlays, key: tuple) -> None:
    base, active = overlays.view(key)
    store.set_slow(*(active[-1] if active else base))


def _apply_store_down(store: Any, overlays: FaultOverlays, key: tuple) -> None:
    base, active = overlays.view(key)
    store.available = base and not active


def _apply_speed(tm: Any, overlays: FaultOverlays, key: tuple) -> None:
    base, factors = overlays.view(key)
    tm.speed_factor = base * math.prod(factors)


def _apply_channel(ch: "Channel", overlays: FaultOverlays, key: tuple, now: int) -> None:
    (delay, capacity), active = overlays.view(key)
    ch.delay_ns = delay + sum(added for added, _ in active)
    limits = [cap for _, cap in active if cap is not None]
    ch.set_capacity(min(limits) if limits else capacity, now)


def _hold(sim: ChaosTarget, overlays: FaultOverlays, spec: FaultSpec, kind: str,
          target: Any, base: Any, contribution: Any, apply) -> None:
    """Activate one fault on `target` and schedule its expiry."""
    key, token = overlays.start(kind, target, base, contribution)
    apply(key)
    if spec.duration:
        sim.engine.schedule(spec.duration, _release, overlays, key, token, apply)


def _release(overlays: FaultOverlays, key: tuple, token: int, apply) -> None:
    overlays.end(key, token)
    apply(key)


def _inject(sim: ChaosTarget, spec: FaultSpec, resolved: Any, overlays: FaultOverlays) -> None:
    kind = spec.kind
    logger.debug(f"Injecting {kind.value} at {sim.engine.now}")
    if kind == FaultKind.KILL_TM:
        sim.recovery.kill_tm(resolved, cause=kind.value)
    elif kind == FaultKind.KILL_TASK:
        sim.recovery.fail_task(resolved, cause=kind.value)
    elif kind == FaultKind.KILL_JM:
        sim.recovery.kill_jm(cause=kind.value)
    elif kind == FaultKind.SLOW_STORE:
        store = sim.store
        _hold(sim, overlays, spec, kind.value, store, (store.p_slow, store.slow_delay_ns),
              (spec.p_slow, spec.delay),
              lambda key: _apply_store_slow(store, overlays, key))
    elif kind == FaultKind.STORE_DOWN:
        store = _store_named(sim, spec.store)
        if store is None:
            logger.warning(f"StoreDown: no {spec.store} store in this run, skipped")
            return
        _hold(sim, overlays, spec, kind.value, store, store.available, True,
              lambda key: _apply_store_down(store, overlays, key))
    elif kind == FaultKind.CPU_SLOW:
        tm = sim.cluster.tms[resolved]
        _hold(sim, overlays, spec, kind.value, tm, tm.speed_factor, spec.factor,
              lambda key: _apply_speed(tm, overlays, key))
    elif kind == FaultKind.NET_DELAY:
        for ch in resolved:
            _hold(sim, overlays, spec, kind.value, ch, (ch.delay_ns, ch.capacity),
                  (spec.added, spec.capacity),
                  lambda key, ch=ch: _apply_channel(ch, overlays, key, sim.engine.now))


def _store_named(sim: ChaosTarget, name: str) -> Any:
    if name == "snapshot":
        return sim.store
    leader = sim.recovery.leader
    if leader is None:
        return None
    return leader.primary if name == "primary" else leader.fallback
