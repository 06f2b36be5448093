from __future__ import annotations

import tomllib
from dataclasses import dataclass
from pathlib import Path

from safecase import __version__
from safecase.core.errors import ScenarioConfigError

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass
class Config:
    jobs: int = 1
    horizon: int = 600
    producer: str = f"safecase/{__version__}"
    d_step: str = "0.5 m"
    v_step: str = "0.25 m/s"
    v_max: str = "40 m/s"
    show_progress: bool = True
    log_level: str = "WARNING"
    # permits the uncertifiable pass controller for falsification runs
    pass_option: bool = False

    def grid_defaults(self) -> dict[str, str]:
        return {"d_step": self.d_step, "v_step": self.v_step, "v_max": self.v_max}


def config_default_toml() -> str:
    return config_to_toml(Config())


def default_config_path() -> Path:
    return Path.home() / ".config" / "safecase" / "config.toml"


def load_config(path: Path | None) -> Config:
    if path is None:
        path = default_config_path()
        if not path.exists():
            return Config()

    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioConfigError(f"{path}: {exc}") from exc
    cfg = Config()
    if "jobs" in data:
        cfg.jobs = max(1, int(data["jobs"]))
    if "horizon" in data:
        cfg.horizon = int(data["horizon"])
    if "producer" in data:
        cfg.producer = str(data["producer"])
    for key in ("d_step", "v_step", "v_max"):
        if key in data:
            setattr(cfg, key, str(data[key]))
    if "show_progress" in data:
        cfg.show_progress = bool(data["show_progress"])
    if "log_level" in data:
        level = str(data["log_level"]).upper()
        if level not in LOG_LEVELS:
            raise ScenarioConfigError(f"{path}: log_level must be one of {', '.join(LOG_LEVELS)}")
        cfg.log_level = level
    if "pass_option" in data:
        cfg.pass_option = bool(data["pass_option"])
    return cfg


def config_to_toml(cfg: Config) -> str:
    def _bool(value: bool) -> str:
        return "true" if value else "false"

    def _quote(value: str) -> str:
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'

    return (
        f"jobs = {int(cfg.jobs)}\n"
        f"horizon = {int(cfg.horizon)}\n"
        f"producer = {_quote(cfg.producer)}\n"
        f"d_step = {_quote(cfg.d_step)}\n"
        f"v_step = {_quote(cfg.v_step)}\n"
        f"v_max = {_quote(cfg.v_max)}\n"
        f"show_progress = {_bool(cfg.show_progress)}\n"
        f"log_level = {_quote(cfg.log_level)}\n"
        f"pass_option = {_bool(cfg.pass_option)}\n"
    )
