"""Shared fixtures: small run configurations and throwaway settings."""
from __future__ import annotations

from typing import Any

import pytest

from packages.core.config import Settings, validate_run_config


def make_config(**blocks: Any):
    """
    Small, fast run config. Keyword arguments replace or extend blocks,
    e.g. make_config(workload={"kind": "ds"}, checkpoint={"mode": "region"}).
    """
    tree: dict[str, Any] = {
        "seed": 1,
        "workload": {"kind": "q2", "parallelism": 2, "rate": 50.0, "duration_s": 4.0,
                     "drain_s": 2.0, "service_ms": 1.0, "key_space": 100},
        "checkpoint": {"enabled": True, "interval_s": 1.0},
        "cluster": {"tms": 8, "slots_per_tm": 2, "spares": 2},
    }
    for name, value in blocks.items():
        if isinstance(value, dict) and isinstance(tree.get(name), dict):
            tree[name] = {**tree[name], **value}
        else:
            tree[name] = value
    return validate_run_config(tree)


@pytest.fixture
def settings(tmp_path) -> Settings:
    return Settings(out=str(tmp_path / "runs"), cache_dir=str(tmp_path / "cache"))
