"""INI experiment files: one section per config model, unknown keys rejected."""
import configparser
from pathlib import Path
from typing import Iterable, Optional, Union

from pydantic import ValidationError

from app.core.errors import ConfigError
from app.models.experiment import ExperimentConfig

RESOLVED_NAME = "config.resolved.ini"


def _parse_override(item: str) -> tuple[str, str, str]:
    key, sep, value = item.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot or not section or not name:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    return section, name.strip(), value.strip()


def load_experiment_config(path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    raw: dict[str, dict[str, Optional[str]]] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path)
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from e
        for section in parser.sections():
            raw[section] = dict(parser.items(section))
    for item in overrides:
        section, name, value = _parse_override(item)
        raw.setdefault(section, {})[name] = value

    unknown = set(raw) - set(ExperimentConfig.model_fields)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    # empty values mean "use the derived default"
    cleaned = {s: {k: (None if v == "" else v) for k, v in values.items()} for s, values in raw.items()}
    try:
        return ExperimentConfig.model_validate(cleaned)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration:\n{e}") from e


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_format(v) for v in value)
    return str(value)


def dump_experiment_config(config: ExperimentConfig) -> str:
    lines = []
    for section, model in config:
        lines.append(f"[{section}]")
        for key, value in model.model_dump(mode="json").items():
            lines.append(f"{key} = {_format(value)}".rstrip())
        lines.append("")
    return "\n".join(lines)


def write_resolved_config(config: ExperimentConfig, output_dir: Union[str, Path]) -> Path:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / RESOLVED_NAME
    path.write_text(dump_experiment_config(config))
    return path
