"""Flat key-value config files: `key = value` lines, `#` comments.

Keys mirror the field names of the window, encoder, and training config
dataclasses; unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, Type, TypeVar

from lkalert.errors import LKAlertError

T = TypeVar("T")


class ConfigError(LKAlertError):
    pass


def load_config(path: Path | str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        values[key] = value
    return values


def _coerce(value: str, annotation: Any, key: str) -> Any:
    text = value.strip()
    if annotation in (bool, "bool"):
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if annotation in (int, "int"):
            return int(text)
        if annotation in (float, "float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {annotation}, got {value!r}") from None
    return text


def build_dataclass(cls: Type[T], mapping: dict[str, str], **overrides: Any) -> T:
    """Instantiate a config dataclass from string values plus typed overrides.

    Only keys naming fields of `cls` are consumed; other keys in the
    mapping are left for a different dataclass to pick up.
    """
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in mapping.items():
        if key in fields:
            kwargs[key] = _coerce(value, fields[key].type, key)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kwargs)


def check_known_keys(mapping: dict[str, str], *classes: type) -> None:
    known: set[str] = set()
    for cls in classes:
        known.update(f.name for f in dataclasses.fields(cls))
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
