"""
StreamLab Configuration

Process settings (environment / .env) and the validated run-configuration tree.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    """Invalid configuration, with the dotted location of the first bad field."""

    def __init__(self, message: str, location: Optional[str] = None):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


# ============================================================================
# Process Settings
# ============================================================================

class Settings(BaseSettings):
    """Environment-driven settings (prefix STREAMLAB_, optional .env file)."""

    model_config = SettingsConfigDict(env_prefix="STREAMLAB_", env_file=".env", extra="ignore")

    out: str = "runs"
    log_level: str = "INFO"
    cache_dir: str = ".cache/streamlab"
    max_pending_events: int = 2_000_000


def get_settings() -> Settings:
    return Settings()


# ============================================================================
# Run Configuration Blocks
# ============================================================================

class ConfigBlock(BaseModel):
    """Base of every run-configuration block; unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid")


class WorkloadConfig(ConfigBlock):
    """Workload preset and source behaviour."""
    kind: Literal["q2", "q12", "ds", "ds_scalable", "ss"] = "q2"
    parallelism: int = Field(default=8, ge=1)
    source_parallelism: Optional[int] = Field(default=None, ge=1)
    stages: int = Field(default=2, ge=2)
    rate: float = Field(default=100.0, gt=0)  # records/s per source operator
    rate_steps: Optional[list[tuple[float, float]]] = None  # [[t_s, rate], ...]
    rate_trace: Optional[str] = None  # CSV with columns t_s,rate
    duration_s: float = Field(default=60.0, gt=0)
    drain_s: float = Field(default=10.0, ge=0)
    zipf_s: float = Field(default=0.0, ge=0)
    key_space: int = Field(default=10_000, ge=1)
    selectivity: float = Field(default=0.5, ge=0, le=1)
    window_s: float = Field(default=5.0, gt=0)
    join_timeout_s: float = Field(default=30.0, gt=0)
    service_ms: float = Field(default=1.0, ge=0)
    service_overrides_ms: dict[str, float] = Field(default_factory=dict)
    shuffle: str = "rebalance"
    shuffle_params: dict[str, Any] = Field(default_factory=dict)
    track_duplicates: bool = False


class EngineConfig(ConfigBlock):
    channel_capacity: int = Field(default=32, ge=1)
    max_pending_events: Optional[int] = Field(default=None, ge=1)
    jitter: float = Field(default=0.0, ge=0, lt=1)
    bucket_s: float = Field(default=1.0, gt=0)
    dedup_descriptors: bool = True


class StoreConfig(ConfigBlock):
    base_ms: float = Field(default=5.0, ge=0)
    ns_per_byte: float = Field(default=1.0, ge=0)
    p_slow: float = Field(default=0.0, ge=0, le=1)
    slow_delay_s: float = Field(default=60.0, ge=0)


class CheckpointConfig(ConfigBlock):
    enabled: bool = True
    mode: Literal["global", "region"] = "global"
    interval_s: float = Field(default=30.0, gt=0)
    timeout_s: Optional[float] = Field(default=None, gt=0)
    max_concurrent: int = Field(default=1, ge=1)
    full_every: int = Field(default=10, ge=1)
    bytes_per_entry: int = Field(default=32, ge=1)
    restore: Literal["eager", "lazy"] = "eager"
    chunks: int = Field(default=64, ge=1)
    max_region_lag: Optional[int] = Field(default=None, ge=0)
    store: StoreConfig = Field(default_factory=StoreConfig)

    @property
    def deadline_s(self) -> float:
        return self.timeout_s if self.timeout_s is not None else self.interval_s


class RecoveryConfig(ConfigBlock):
    strategy: Literal["full", "region", "single_task"] = "region"
    detection_ms: float = Field(default=500.0, ge=0)
    restart_delay_s: Optional[float] = Field(default=None, ge=0)
    backoff_base_s: float = Field(default=1.0, gt=0)
    backoff_cap_s: float = Field(default=60.0, gt=0)

    @property
    def effective_restart_delay_s(self) -> float:
        if self.restart_delay_s is not None:
            return self.restart_delay_s
        return 0.0 if self.strategy == "single_task" else 1.0


class ReplicationConfig(ConfigBlock):
    mode: Literal["passive", "active_standby"] = "passive"
    standby_tm_offset: int = Field(default=1, ge=1)
    standby_lag_records: int = Field(default=0, ge=0)


class AutoscaleConfig(ConfigBlock):
    enabled: bool = False
    interval_s: float = Field(default=10.0, gt=0)
    window: int = Field(default=5, ge=1)
    c: float = Field(default=1.0, gt=0)
    s_sat: float = Field(default=0.95, gt=0, le=1)
    beta: float = Field(default=1.2, gt=0)
    rho: float = Field(default=0.8, gt=0, lt=1)
    probation_intervals: int = Field(default=2, ge=1)
    cooldown_s: float = Field(default=300.0, ge=0)
    freeze: list[tuple[str, str]] = Field(default_factory=list)
    max_step: float = Field(default=2.0, ge=1)
    clamp_steps: bool = False
    breaker_k: int = Field(default=3, ge=1)
    breaker_reset_s: float = Field(default=3600.0, gt=0)
    max_changes_per_hour: int = Field(default=6, ge=1)
    min_p: int = Field(default=1, ge=1)
    max_p: int = Field(default=256, ge=1)
    clock_start: str = "00:00"

    @model_validator(mode="after")
    def _check_bounds(self) -> "AutoscaleConfig":
        if self.min_p > self.max_p:
            raise ValueError("min_p must not exceed max_p")
        return self


class StartupDist(ConfigBlock):
    dist: Literal["lognormal", "fixed"] = "lognormal"
    p50: float = Field(default=800.0, ge=0)
    p99: float = Field(default=5000.0, ge=0)


class RpcCost(ConfigBlock):
    a_ns: int = Field(default=200_000, ge=0)
    b_ns: int = Field(default=5_000, ge=0)


class ClusterConfig(ConfigBlock):
    tms: int = Field(default=64, ge=1)
    slots_per_tm: int = Field(default=4, ge=1)
    tm_startup_ms: StartupDist = Field(default_factory=StartupDist)
    rpc: RpcCost = Field(default_factory=RpcCost)
    spares: int = Field(default=8, ge=0)
    batched_deploy: bool = True


class HaConfig(ConfigBlock):
    jm_failover_s: float = Field(default=5.0, ge=0)
    leader_check_s: float = Field(default=10.0, gt=0)


class SloConfig(ConfigBlock):
    gamma: Literal["full", "partial"] = "full"
    lambda_max_ms: float = Field(default=1000.0, gt=0)
    tau_max_s: float = Field(default=60.0, gt=0)
    max_dropped: Optional[int] = Field(default=None, ge=0)  # None: unbounded under partial


class RunConfig(ConfigBlock):
    """Complete, validated configuration of one experiment run."""
    seed: int
    job_file: Optional[str] = None
    fault_plan: Optional[Union[str, list[dict[str, Any]], dict[str, Any]]] = None
    out_dir: Optional[str] = None
    workload: WorkloadConfig = Field(default_factory=WorkloadConfig)
    engine: EngineConfig = Field(default_factory=EngineConfig)
    checkpoint: CheckpointConfig = Field(default_factory=CheckpointConfig)
    recovery: RecoveryConfig = Field(default_factory=RecoveryConfig)
    replication: ReplicationConfig = Field(default_factory=ReplicationConfig)
    autoscale: AutoscaleConfig = Field(default_factory=AutoscaleConfig)
    cluster: ClusterConfig = Field(default_factory=ClusterConfig)
    ha: HaConfig = Field(default_factory=HaConfig)
    slo: Optional[SloConfig] = None

    @field_validator("job_file")
    @classmethod
    def _job_file_exists(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and not Path(value).is_file():
            raise ValueError(f"job file not found: {value}")
        return value

    @field_validator("fault_plan")
    @classmethod
    def _plan_file_exists(cls, value: Any) -> Any:
        if isinstance(value, str) and not Path(value).is_file():
            raise ValueError(f"fault plan not found: {value}")
        return value


# ============================================================================
# Loading and Overrides
# ============================================================================

def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(tree: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """
    Apply dot-notation overrides (``checkpoint.interval_s=30``) to a raw tree.

    Values are parsed as JSON when possible, otherwise kept as strings.
    Returns a new tree; the input is not modified.
    """
    result = json.loads(json.dumps(tree))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}", location=item)
        path, raw = item.split("=", 1)
        parts = [p for p in path.strip().split(".") if p]
        if not parts:
            raise ConfigError("empty override key", location=item)
        node = result
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = {}
                node[part] = child
            if not isinstance(child, dict):
                raise ConfigError(f"cannot descend into non-object {part!r}", location=path)
            node = child
        node[parts[-1]] = _parse_override_value(raw)
    return result


def _resolve_paths(tree: dict[str, Any], base_dir: Path) -> dict[str, Any]:
    for key in ("job_file", "fault_plan"):
        value = tree.get(key)
        if isinstance(value, str) and not Path(value).is_absolute():
            tree[key] = str((base_dir / value).resolve())
    workload = tree.get("workload")
    trace = workload.get("rate_trace") if isinstance(workload, dict) else None
    if isinstance(trace, str) and not Path(trace).is_absolute():
        tree["workload"]["rate_trace"] = str((base_dir / trace).resolve())
    return tree


def validate_run_config(tree: dict[str, Any]) -> RunConfig:
    """Validate a raw tree, converting pydantic errors into ConfigError."""
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(p) for p in first.get("loc", ()))
        raise ConfigError(first.get("msg", "invalid value"), location=location or None) from e


def load_run_config(path: Union[str, Path], overrides: Optional[list[str]] = None) -> RunConfig:
    """Load a JSON run config, apply overrides, resolve relative paths and validate."""
    path = Path(path)
    try:
        tree = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"line {e.lineno} column {e.colno}: {e.msg}", location=str(path)) from e
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a JSON object", location=str(path))
    tree = apply_overrides(tree, overrides or [])
    tree = _resolve_paths(tree, path.parent)
    config = validate_run_config(tree)
    logger.debug(f"Loaded run config from {path} (seed={config.seed})")
    return config


def dump_run_config(config: RunConfig) -> dict[str, Any]:
    """Resolved configuration as a JSON-ready dict."""
    return config.model_dump(mode="json")
