"""
Config files: ``key=value`` lines read with python-dotenv, or YAML mappings.

Keys are matched case-insensitively with ``-`` and ``_`` treated alike; a
single file may carry the keys of several config dataclasses.
"""
import dataclasses
import logging
import typing
from typing import Any, Dict, Mapping, Optional, Type, TypeVar

import yaml
from dotenv import dotenv_values

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

T = TypeVar("T")

# config keys that are not valid Python identifiers
KEY_ALIASES = {"lambda": "lam"}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def normalize_key(key: str) -> str:
    key = key.strip().lower().replace("-", "_")
    return KEY_ALIASES.get(key, key)


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        if path.endswith((".yaml", ".yml")):
            with open(path, "r", encoding="utf-8") as handle:
                loaded = yaml.safe_load(handle) or {}
        else:
            loaded = dotenv_values(path, encoding="utf-8")
    except yaml.YAMLError as error:
        raise ConfigError(f"{path} is not valid YAML: {error}") from error
    except UnicodeDecodeError as error:
        raise ConfigError(f"{path} is not valid UTF-8: {error}") from error
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path} must hold a mapping at the top level")
    logger.info(f"Loaded {len(loaded)} config keys from {path}")
    return {normalize_key(k): v for k, v in loaded.items()}


def _unwrap_optional(tp):
    if typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return tp, False


def coerce(value: Any, tp) -> Any:
    """Convert a raw config value (string from a key=value file, or YAML scalar/list) to tp"""
    tp, optional = _unwrap_optional(tp)
    if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none", "null")):
        if optional:
            return None
        raise ConfigError(f"Missing value for non-optional {tp}")

    origin = typing.get_origin(tp)
    if origin in (tuple, list):
        args = typing.get_args(tp)
        item_type = args[0] if args else str
        items = value
        if isinstance(value, str):
            items = [v for v in value.replace(";", ",").split(",") if v.strip()]
        elif not isinstance(value, (list, tuple)):
            items = [value]
        return tuple(coerce(v, item_type) for v in items)
    if tp is bool:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in _TRUE:
            return True
        if text in _FALSE:
            return False
        raise ConfigError(f"Cannot read {value!r} as a boolean")
    if tp in (int, float, str):
        try:
            if tp is int and isinstance(value, str):
                return int(float(value)) if "e" in value.lower() else int(value)
            return tp(value.strip() if isinstance(value, str) else value)
        except (TypeError, ValueError) as error:
            raise ConfigError(f"Cannot read {value!r} as {tp.__name__}") from error
    return value


def build_config(cls: Type[T], values: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> T:
    """Instantiate dataclass cls from file values, then CLI overrides (None overrides are ignored)"""
    hints = typing.get_type_hints(cls)
    merged: Dict[str, Any] = {}
    for source in (values, overrides or {}):
        for key, value in source.items():
            name = normalize_key(key)
            if name in hints and value is not None:
                merged[name] = value
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.init and f.name in merged:
            kwargs[f.name] = coerce(merged[f.name], hints[f.name])
    try:
        return cls(**kwargs)
    except TypeError as error:
        raise ConfigError(str(error)) from error


def config_to_dict(config: Any) -> Dict[str, Any]:
    out = {}
    for key, value in dataclasses.asdict(config).items():
        out["lambda" if key == "lam" else key] = list(value) if isinstance(value, tuple) else value
    return out


def dump_config(sections: Mapping[str, Any], path: str) -> None:
    """Echo the effective configuration next to the outputs"""
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(dict(sections), handle, sort_keys=False)
