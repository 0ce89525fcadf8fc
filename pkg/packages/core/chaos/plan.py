"""
Fault Plan Loading

Validates plan documents (JSON array or {"seed", "faults"} object) into
time-sorted plans and generates reproducible random plans.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import numpy as np
from pydantic import ValidationError

from ..runtime.engine import NS_PER_S
from ..seeding import stable_hash
from .models import FaultKind, FaultPlan, FaultSpec, PlanError

logger = logging.getLogger(__name__)

PlanDocument = Union[str, Path, list, dict, None]


def _read(document: PlanDocument) -> tuple[list[Any], int]:
    if document is None:
        return [], 0
    if isinstance(document, (str, Path)):
        path = Path(document)
        try:
            document = json.loads(path.read_text())
        except FileNotFoundError as e:
            raise PlanError(f"plan file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise PlanError(f"line {e.lineno}: {e.msg}", location=str(path)) from e
    if isinstance(document, dict):
        faults = document.get("faults", [])
        seed = document.get("seed", 0)
        if not isinstance(seed, int):
            raise PlanError("seed must be an integer", location="seed")
    else:
        faults, seed = document, 0
    if not isinstance(faults, list):
        raise PlanError("faults must be a list", location="faults")
    return faults, seed


def _check_target(spec: FaultSpec, location: str, tm_ids: Optional[set[str]],
                  operators: Optional[set[str]]) -> None:
    target = spec.target
    if isinstance(target, str) and target != "random":
        if spec.kind in (FaultKind.KILL_TM, FaultKind.CPU_SLOW) and tm_ids is not None \
                and target not in tm_ids:
            raise PlanError(f"unknown TaskManager {target!r}", location=f"{location}.target")
    if isinstance(target, dict) and operators is not None:
        for key in ("hosts", "from", "to"):
            if key in target and target[key] not in operators:
                raise PlanError(f"unknown operator {target[key]!r}",
                                location=f"{location}.target.{key}")


def load_plan(
    document: PlanDocument,
    tm_ids: Optional[Iterable[str]] = None,
    operators: Optional[Iterable[str]] = None,
) -> FaultPlan:
    """
    Validate a plan document and sort it by injection time (stable).

    When `tm_ids` / `operators` are given, explicit selectors are checked
    against them.
    """
    faults, seed = _read(document)
    tm_set = set(tm_ids) if tm_ids is not None else None
    op_set = set(operators) if operators is not None else None
    specs: list[FaultSpec] = []
    for i, raw in enumerate(faults):
        location = f"[{i}]"
        try:
            spec = FaultSpec.model_validate(raw)
        except ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(p) for p in first.get("loc", ()))
            raise PlanError(first.get("msg", "invalid fault"),
                            location=f"{location}.{field}" if field else location) from e
        _check_target(spec, location, tm_set, op_set)
        specs.append(spec)
    specs.sort(key=lambda s: s.at)
    logger.debug(f"Loaded fault plan with {len(specs)} faults (seed={seed})")
    return FaultPlan(seed=seed, faults=specs)


RANDOM_KINDS = (FaultKind.KILL_TM, FaultKind.KILL_TASK, FaultKind.SLOW_STORE,
                FaultKind.STORE_DOWN, FaultKind.NET_DELAY, FaultKind.CPU_SLOW)


def random_plan(
    seed: int,
    horizon_ns: int,
    tm_ids: list[str],
    max_faults: int = 3,
    kinds: tuple[FaultKind, ...] = RANDOM_KINDS,
    latest_fraction: float = 0.8,
) -> FaultPlan:
    """
    Reproducible random plan: 1..max_faults faults placed in
    [0.1, latest_fraction] of the horizon.
    """
    rng = np.random.default_rng([seed, stable_hash("random_plan") & 0xFFFFFFFF])
    count = int(rng.integers(1, max_faults + 1))
    faults = []
    for _ in range(count):
        at = int(rng.uniform(0.1, latest_fraction) * horizon_ns)
        kind = kinds[int(rng.integers(len(kinds)))]
        spec: dict[str, Any] = {"at": f"{at}ns", "kind": kind.value}
        if kind in (FaultKind.KILL_TM, FaultKind.CPU_SLOW):
            spec["target"] = tm_ids[int(rng.integers(len(tm_ids)))]
        if kind == FaultKind.KILL_TASK:
            spec["target"] = "random"
        if kind == FaultKind.CPU_SLOW:
            spec["factor"] = float(rng.choice([2.0, 5.0, 10.0]))
            spec["duration"] = f"{int(rng.uniform(1, 10) * NS_PER_S)}ns"
        if kind == FaultKind.SLOW_STORE:
            spec["p_slow"] = float(rng.uniform(0.05, 0.5))
            spec["delay"] = f"{int(rng.uniform(1, 60) * NS_PER_S)}ns"
            spec["duration"] = f"{int(rng.uniform(5, 60) * NS_PER_S)}ns"
        if kind == FaultKind.STORE_DOWN:
            spec["duration"] = f"{int(rng.uniform(1, 20) * NS_PER_S)}ns"
        if kind == FaultKind.NET_DELAY:
            spec["added"] = f"{int(rng.uniform(1, 50))}ms"
            spec["duration"] = f"{int(rng.uniform(1, 10) * NS_PER_S)}ns"
        faults.append(spec)
    return load_plan({"seed": seed, "faults": faults})
