"""Tests for run-config loading, overrides and validation errors."""
from __future__ import annotations

import json

import pytest

from packages.core.config import (
    ConfigError,
    RunConfig,
    Settings,
    apply_overrides,
    dump_run_config,
    load_run_config,
    validate_run_config,
)


def _write(path, tree) -> str:
    path.write_text(json.dumps(tree))
    return str(path)


class TestOverrides:
    def test_values_are_parsed_as_json(self):
        tree = apply_overrides({"seed": 1}, [
            "checkpoint.interval_s=30",
            "checkpoint.mode=region",
            "checkpoint.enabled=false",
            "autoscale.freeze=[[\"22:00\", \"02:00\"]]",
        ])

        assert tree["checkpoint"] == {"interval_s": 30, "mode": "region", "enabled": False}
        assert tree["autoscale"]["freeze"] == [["22:00", "02:00"]]

    def test_input_is_not_modified(self):
        original = {"seed": 1, "workload": {"rate": 10}}
        apply_overrides(original, ["workload.rate=20"])
        assert original["workload"]["rate"] == 10

    @pytest.mark.parametrize("item", ["seed", "=3"])
    def test_malformed(self, item):
        with pytest.raises(ConfigError):
            apply_overrides({}, [item])

    def test_cannot_descend_into_a_scalar(self):
        with pytest.raises(ConfigError) as excinfo:
            apply_overrides({"seed": 1}, ["seed.value=2"])
        assert excinfo.value.location == "seed.value"


class TestValidation:
    def test_defaults(self):
        config = validate_run_config({"seed": 3})

        assert config.workload.kind == "q2"
        assert config.checkpoint.deadline_s == config.checkpoint.interval_s
        assert config.recovery.effective_restart_delay_s == 1.0
        assert config.slo is None

    def test_single_task_restarts_immediately(self):
        config = validate_run_config({"seed": 1, "recovery": {"strategy": "single_task"}})
        assert config.recovery.effective_restart_delay_s == 0.0

    @pytest.mark.parametrize("tree, location", [
        ({}, "seed"),
        ({"seed": 1, "checkpoint": {"interval_s": 0}}, "checkpoint.interval_s"),
        ({"seed": 1, "workload": {"kind": "q99"}}, "workload.kind"),
        ({"seed": 1, "workload": {"parallelism": 0}}, "workload.parallelism"),
        ({"seed": 1, "checkpoint": {"store": {"p_slow": 1.5}}}, "checkpoint.store.p_slow"),
        ({"seed": 1, "recovery": {"stratgy": "full"}}, "recovery.stratgy"),
        ({"seed": 1, "colour": "blue"}, "colour"),
        ({"seed": 1, "job_file": "/no/such/job.json"}, "job_file"),
    ])
    def test_error_locations(self, tree, location):
        with pytest.raises(ConfigError) as excinfo:
            validate_run_config(tree)
        assert excinfo.value.location == location

    def test_autoscale_bounds(self):
        with pytest.raises(ConfigError) as excinfo:
            validate_run_config({"seed": 1, "autoscale": {"min_p": 9, "max_p": 4}})
        assert excinfo.value.location == "autoscale"
        assert "min_p" in str(excinfo.value)

    def test_dump_is_json_ready(self):
        config = validate_run_config({"seed": 1, "slo": {"gamma": "partial"}})
        dumped = dump_run_config(config)

        assert json.loads(json.dumps(dumped)) == dumped
        assert RunConfig.model_validate(dumped) == config


class TestLoadRunConfig:
    def test_relative_paths_resolve_against_the_config_file(self, tmp_path):
        (tmp_path / "plans").mkdir()
        plan = tmp_path / "plans" / "kill.json"
        plan.write_text("[]")
        path = _write(tmp_path / "run.json", {"seed": 2, "fault_plan": "plans/kill.json"})

        config = load_run_config(path)
        assert config.fault_plan == str(plan.resolve())

    def test_overrides_apply_before_validation(self, tmp_path):
        path = _write(tmp_path / "run.json", {"seed": 2, "checkpoint": {"interval_s": 0}})
        config = load_run_config(path, ["checkpoint.interval_s=5"])
        assert config.checkpoint.interval_s == 5.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "absent.json")

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{\"seed\": ")
        with pytest.raises(ConfigError) as excinfo:
            load_run_config(path)
        assert excinfo.value.location == str(path)

    def test_root_must_be_an_object(self, tmp_path):
        with pytest.raises(ConfigError, match="JSON object"):
            load_run_config(_write(tmp_path / "run.json", [1, 2]))


class TestSettings:
    def test_environment_prefix(self, monkeypatch, tmp_path):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv("STREAMLAB_OUT", "elsewhere")
        monkeypatch.setenv("STREAMLAB_MAX_PENDING_EVENTS", "1000")

        settings = Settings()
        assert settings.out == "elsewhere"
        assert settings.max_pending_events == 1000
