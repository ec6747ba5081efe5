"""YAML scenario files.

A scenario file is a YAML mapping with optional sections ``road``,
``regions``, ``vehicles``, ``requests``, ``stage1``, ``stage2`` and top-level
``horizon`` and ``seed``. Anything omitted keeps the default highway
scenario value, so an empty file is the default scenario. Unknown keys and
wrongly typed values are rejected with the line they appear on.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any

import yaml

from .harness import (
    ConfigError,
    RegionConfig,
    RequestConfig,
    RoadConfig,
    ScenarioConfig,
    Stage1Config,
    Stage2Config,
    VehicleConfig,
)

SECTIONS = {
    "road": RoadConfig,
    "regions": RegionConfig,
    "vehicles": VehicleConfig,
    "requests": RequestConfig,
    "stage1": Stage1Config,
    "stage2": Stage2Config,
}
TOP_LEVEL = {"horizon": "int", "seed": "int"}


class ConfigParseError(ConfigError):
    """The file is not valid YAML or does not match the schema."""


def _key_lines(node: yaml.Node | None, prefix: str = "", out: dict | None = None) -> dict[str, int]:
    """Map dotted key paths to 1-based source lines."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}{key_node.value}"
            out[path] = key_node.start_mark.line + 1
            _key_lines(value_node, path + ".", out)
    return out


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v: Any) -> bool:
    return _is_int(v) or isinstance(v, float)


def _coerce(kind: str, value: Any, where: str) -> Any:
    """Check ``value`` against a dataclass annotation string and normalise it."""
    options = [k.strip() for k in kind.split("|")]
    if value is None and "None" in options:
        return None
    for opt in options:
        if opt == "int" and _is_int(value):
            return value
        if opt == "float" and _is_num(value):
            return float(value)
        if opt == "str" and isinstance(value, str):
            return value
        if opt == "bool" and isinstance(value, bool):
            return value
        if opt == "dict" and isinstance(value, dict):
            return value
        if opt.startswith("tuple[") and isinstance(value, list):
            inner = opt[len("tuple["):-1].split(",")[0].strip()
            return tuple(_coerce(inner, v, where) for v in value)
    raise ConfigParseError(f"{where}: expected {kind}, got {value!r}")


def _where(path: str, lines: dict[str, int], source: str) -> str:
    line = lines.get(path)
    return f"{source}:{line}: {path}" if line else f"{source}: {path}"


def config_from_mapping(data: Any, lines: dict[str, int] | None = None, source: str = "<config>") -> ScenarioConfig:
    """Build a validated config from an already-loaded mapping."""
    lines = lines or {}
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigParseError(f"{source}: top level must be a mapping")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        key = str(key)
        if key in TOP_LEVEL:
            kwargs[key] = _coerce(TOP_LEVEL[key], value, _where(key, lines, source))
            continue
        if key not in SECTIONS:
            raise ConfigParseError(f"{_where(key, lines, source)}: unknown key")
        cls = SECTIONS[key]
        if value is None:
            continue
        if not isinstance(value, dict):
            raise ConfigParseError(f"{_where(key, lines, source)}: section must be a mapping")
        fields = {f.name: f for f in dataclasses.fields(cls)}
        base = cls()
        changes = {}
        for fname, fvalue in value.items():
            path = f"{key}.{fname}"
            if fname not in fields:
                raise ConfigParseError(f"{_where(path, lines, source)}: unknown key")
            coerced = _coerce(fields[fname].type, fvalue, _where(path, lines, source))
            if cls is RegionConfig and fname == "aoi_max":
                merged = dict(base.aoi_max)
                for kind, amax in coerced.items():
                    if not _is_int(amax):
                        raise ConfigParseError(
                            f"{_where(f'{path}.{kind}', lines, source)}: expected int, got {amax!r}")
                    merged[str(kind)] = amax
                coerced = merged
            changes[fname] = coerced
        kwargs[key] = dataclasses.replace(base, **changes)
    return ScenarioConfig(**kwargs)


def parse_config_text(text: str, source: str = "<config>") -> ScenarioConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        loc = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ConfigParseError(f"{loc}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"{source}: {exc}") from exc
    return config_from_mapping(data, _key_lines(node), source)


def parse_config(path: str | Path) -> ScenarioConfig:
    """Read and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigParseError(f"{path}: {exc.strerror or exc}") from exc
    return parse_config_text(text, str(path))


def config_to_mapping(cfg: ScenarioConfig) -> dict[str, Any]:
    """Plain-data form of ``cfg`` that round-trips through ``config_from_mapping``."""
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v
    out: dict[str, Any] = {"horizon": cfg.horizon, "seed": cfg.seed}
    for name in SECTIONS:
        out[name] = {k: plain(v) for k, v in dataclasses.asdict(getattr(cfg, name)).items()}
    return out
