"""
Configuration module for the CLP engine

Process-level settings come from environment variables (Config); experiment
settings come from a sectioned INI file validated into schemas.ExperimentConfig.
"""

import configparser
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, Optional

from pydantic import ValidationError

from core import ClpError
from schemas import ExperimentConfig

CONFIG_SECTIONS = ("learner", "data", "protocol", "output")


class ConfigError(ClpError):
    """Raised for unreadable or invalid experiment configuration"""

    exit_code = 1


class Config:
    """Process settings for the CLP engine"""

    # Debug-build contract checks
    DEBUG = os.getenv("CLP_DEBUG", "false").lower() == "true"

    # Logging settings
    LOG_LEVEL = os.getenv("CLP_LOG_LEVEL", "INFO")
    LOG_FORMAT = os.getenv("CLP_LOG_FORMAT", "text")

    # Seed fan-out
    WORKERS = int(os.getenv("CLP_WORKERS", 1))

    @staticmethod
    def get_timestamp() -> str:
        """Get current timestamp in ISO format"""
        return datetime.now(timezone.utc).isoformat()


# Global config instance
config = Config()


def parse_overrides(overrides: Iterable[str]) -> Dict[str, Dict[str, str]]:
    """Turn ``section.key=value`` flags into a nested dict"""
    parsed: Dict[str, Dict[str, str]] = {}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"Override must look like section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        section, key = dotted.strip().split(".", 1)
        if section not in CONFIG_SECTIONS:
            raise ConfigError(f"Unknown config section {section!r}", {"sections": CONFIG_SECTIONS})
        parsed.setdefault(section, {})[key.strip()] = value.strip()
    return parsed


def load_experiment_config(
    path: Optional[str],
    overrides: Iterable[str] = (),
) -> ExperimentConfig:
    """Read an INI experiment file, apply flag overrides, validate"""
    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"Config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"Cannot parse config file {path}: {e}")

    raw: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section not in CONFIG_SECTIONS:
            raise ConfigError(f"Unknown config section [{section}]", {"sections": CONFIG_SECTIONS})
        raw[section] = dict(parser.items(section))
    for section, values in parse_overrides(overrides).items():
        raw.setdefault(section, {}).update(values)

    if "learner" not in raw or "kind" not in raw["learner"]:
        raise ConfigError("learner.kind is required")

    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid experiment config: {e}", {"errors": e.errors()})
