from __future__ import annotations

import tomllib

import pytest

from safecase.core.config import Config, config_default_toml, config_to_toml, load_config
from safecase.core.errors import ScenarioConfigError


def test_defaults_without_file(tmp_path, monkeypatch):
    monkeypatch.setenv("HOME", str(tmp_path))
    cfg = load_config(None)
    assert cfg == Config()
    assert cfg.horizon == 600
    assert cfg.grid_defaults() == {"d_step": "0.5 m", "v_step": "0.25 m/s", "v_max": "40 m/s"}


def test_default_toml_is_loadable(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text(config_default_toml(), encoding="utf-8")
    assert load_config(path) == Config()


def test_round_trip_of_custom_values(tmp_path):
    cfg = Config(
        jobs=4,
        horizon=120,
        producer='lab "A"',
        d_step="1 m",
        show_progress=False,
        log_level="DEBUG",
        pass_option=True,
    )
    path = tmp_path / "config.toml"
    path.write_text(config_to_toml(cfg), encoding="utf-8")
    assert load_config(path) == cfg
    assert tomllib.loads(config_to_toml(cfg))["producer"] == 'lab "A"'


def test_partial_file_keeps_other_defaults(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text("jobs = 3\n", encoding="utf-8")
    cfg = load_config(path)
    assert cfg.jobs == 3
    assert cfg.v_step == Config().v_step


def test_bad_files(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text("log_level = 'LOUD'\n", encoding="utf-8")
    with pytest.raises(ScenarioConfigError):
        load_config(path)
    path.write_text("jobs = [\n", encoding="utf-8")
    with pytest.raises(ScenarioConfigError):
        load_config(path)
