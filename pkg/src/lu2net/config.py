"""INI-style run configuration with [network], [train] and [loss] sections.

Example::

    [network]
    stage_widths = 64, 128, 128, 128
    axial_k = 7

    [train]
    epochs = 150
    lr0 = 0.0005
"""

from __future__ import annotations

import configparser
import dataclasses
import re
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError
from .losses import LossConfig
from .network import NetworkConfig
from .train import TrainConfig

SECTIONS = {"network": NetworkConfig, "train": TrainConfig, "loss": LossConfig}


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def as_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return lineno
    return None


def _base_type(tp):
    if isinstance(tp, str):
        tp = eval(tp, {"tuple": tuple, "float": float, "int": int, "str": str, "bool": bool, "dict": dict})
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return _base_type(args[0])[0], True
    return tp, False


def _parse_value(raw: str, tp):
    base, optional = _base_type(tp)
    text = raw.strip()
    if optional and text.lower() in ("", "none"):
        return None
    origin = typing.get_origin(base)
    if base is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if base is int:
        return int(text)
    if base is float:
        return float(text)
    if base is str:
        return text
    if origin is tuple:
        elem = typing.get_args(base)[0]
        elem = float if elem is float else int
        return tuple(elem(v) for v in text.replace(",", " ").split())
    if base is dict or origin is dict:
        pairs = (item.split(":") for item in text.replace(",", " ").split())
        return {k.strip(): float(v) for k, v in pairs}
    raise ValueError(f"unsupported field type {base!r}")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    built = {}
    for section, cls in SECTIONS.items():
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        if parser.has_section(section):
            for key, raw in parser.items(section):
                lineno = _line_of(text, section, key)
                where = f"{source}, line {lineno}" if lineno else source
                if key not in fields:
                    raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
                try:
                    values[key] = _parse_value(raw, fields[key].type)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"{where}: bad value for {section}.{key}: {exc}") from None
        try:
            built[section] = cls(**values)
        except ConfigError as exc:
            raise ConfigError(f"{source}: [{section}] {exc}") from None
    for extra in parser.sections():
        if extra not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{extra}]")
    return RunConfig(**built)


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def override(cfg, **changes):
    """Copy a config dataclass replacing only the non-None entries."""
    changes = {k: v for k, v in changes.items() if v is not None}
    return dataclasses.replace(cfg, **changes) if changes else cfg
