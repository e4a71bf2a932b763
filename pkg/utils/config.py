"""Layered experiment configuration.

Values are resolved in increasing precedence: dataclass defaults, a named
preset from `presets/`, an optional INI file, generated per-field CLI flags
and finally `--set section.field=value` overrides.
"""

import configparser
import os
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any, Optional, Sequence, Union

from dotenv import load_dotenv

from utils import PRESETS_DIR
from utils.data_types.config_types import ExperimentConfig
from utils.errors import ConfigurationError
from utils.logging import LoggerFactory

DEFAULT_PRESET = "desk"
FLAG_PREFIX = "cfg__"

Overrides = dict[str, dict[str, Any]]


def load_environment() -> dict[str, Optional[str]]:
    """Read `.env` and return the environment defaults the CLI understands."""
    load_dotenv()
    return {"log_dir": os.getenv("VSR_LOG_DIR"), "work_dir": os.getenv("VSR_WORK_DIR")}


def read_ini(path: Union[str, Path]) -> Overrides:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigurationError(f"Cannot parse config file {path}: {e}") from e
    sections = ExperimentConfig.sections()
    overrides: Overrides = {}
    for name in parser.sections():
        if name not in sections:
            raise ConfigurationError(f"Unknown section [{name}] in {path}, expected one of {sorted(sections)}")
        overrides[name] = dict(parser.items(name))
    return overrides


def write_ini(cfg: ExperimentConfig, path: Union[str, Path]) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    for section, values in cfg.to_dict().items():
        parser[section] = {
            key: ", ".join(str(v) for v in value) if isinstance(value, list) else str(value)
            for key, value in values.items()
        }
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)


def preset_path(name: str) -> Path:
    path = Path(name)
    if path.suffix == ".ini" and path.exists():
        return path
    path = PRESETS_DIR / f"{name}.ini"
    if not path.exists():
        available = sorted(p.stem for p in PRESETS_DIR.glob("*.ini"))
        raise ConfigurationError(f"Unknown preset `{name}`, available: {available}")
    return path


def parse_set_overrides(items: Optional[Sequence[str]]) -> Overrides:
    overrides: Overrides = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        section, dot, field_name = key.strip().partition(".")
        if not sep or not dot or not field_name:
            raise ConfigurationError(f"Malformed override `{item}`, expected section.field=value")
        overrides.setdefault(section, {})[field_name] = value
    return overrides


def _merge(base: Overrides, extra: Overrides) -> Overrides:
    merged = {section: dict(values) for section, values in base.items()}
    for section, values in extra.items():
        merged.setdefault(section, {}).update(values)
    return merged


def add_config_arguments(parser: ArgumentParser) -> None:
    """Add `--preset`, `--config`, `--set` and one flag per config field."""
    group = parser.add_argument_group("experiment configuration")
    group.add_argument("--preset", default=DEFAULT_PRESET, help=f"Preset name or INI path (default: {DEFAULT_PRESET})")
    group.add_argument("--config", type=Path, help="INI file applied on top of the preset")
    group.add_argument(
        "--set",
        action="append",
        dest="overrides",
        metavar="SECTION.FIELD=VALUE",
        help="Override any config field, may be repeated",
    )
    for section, record in ExperimentConfig.sections().items():
        for field_name, annotation in record.field_types().items():
            group.add_argument(
                f"--{section}-{field_name}".replace("_", "-"),
                dest=f"{FLAG_PREFIX}{section}__{field_name}",
                metavar=getattr(annotation, "__name__", "VALUES").upper(),
                help=_field_help(section, field_name),
            )


def _field_help(section: str, field_name: str) -> str:
    default = getattr(getattr(ExperimentConfig(), section), field_name)
    return f"[{section}] {field_name} (default {default})"


def flag_overrides(args: Namespace) -> Overrides:
    overrides: Overrides = {}
    for dest, value in vars(args).items():
        if dest.startswith(FLAG_PREFIX) and value is not None:
            section, field_name = dest[len(FLAG_PREFIX) :].split("__", 1)
            overrides.setdefault(section, {})[field_name] = value
    return overrides


def build_config(
    preset: Optional[str] = DEFAULT_PRESET,
    config_file: Optional[Union[str, Path]] = None,
    flags: Optional[Overrides] = None,
    set_items: Optional[Sequence[str]] = None,
) -> ExperimentConfig:
    layers: Overrides = {}
    if preset:
        layers = _merge(layers, read_ini(preset_path(preset)))
    if config_file:
        layers = _merge(layers, read_ini(config_file))
    layers = _merge(layers, flags or {})
    layers = _merge(layers, parse_set_overrides(set_items))
    cfg = ExperimentConfig.from_dict(layers).validate()
    LoggerFactory.get_logger("config").debug(f"Resolved config {cfg.config_hash()[:12]} from preset `{preset}`")
    return cfg


def config_from_args(args: Namespace) -> ExperimentConfig:
    return build_config(args.preset, args.config, flag_overrides(args), args.overrides)
