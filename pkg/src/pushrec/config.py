"""Key-value configuration files.

All configuration files are INI-style text read with :mod:`configparser`.
Values are SI units, angles in radians.  Vectors are written as comma
separated numbers (``com = 0.0, -0.12``) and booleans as ``true``/``false``.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for malformed or invalid configuration values.

    ``field`` names the offending key so the CLI can report it.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def parse_value(text: str) -> Any:
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    if "," in text:
        return [parse_value(part) for part in text.split(",")]
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    if hasattr(value, "tolist"):
        return format_value(value.tolist())
    return str(value)


def read_sections(path: str | os.PathLike) -> dict[str, dict[str, Any]]:
    """Read a config file into ``{section: {key: parsed value}}``, keeping order."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "config file not found")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(str(path), f"parse error: {exc}") from exc
    return {
        name: {key: parse_value(val) for key, val in parser[name].items()}
        for name in parser.sections()
    }


def dump_sections(sections: dict[str, dict[str, Any]]) -> str:
    lines = []
    for name, items in sections.items():
        lines.append(f"[{name}]")
        for key, val in items.items():
            lines.append(f"{key} = {format_value(val)}")
        lines.append("")
    return "\n".join(lines)


def config_hash(obj: Any) -> str:
    """Stable short hash of a JSON-serialisable object."""
    blob = json.dumps(obj, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _json_default(obj):
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if hasattr(obj, "__dict__"):
        return vars(obj)
    raise TypeError(type(obj))


def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def apply_overrides(target: Any, values: dict[str, Any], prefix: str) -> None:
    """Set dataclass attributes from a flat dict, rejecting unknown keys."""
    for key, val in values.items():
        if not hasattr(target, key):
            raise ConfigError(f"{prefix}.{key}", "unknown key")
        current = getattr(target, key)
        if isinstance(current, bool) and not isinstance(val, bool):
            raise ConfigError(f"{prefix}.{key}", f"expected boolean, got {val!r}")
        if isinstance(current, float) and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if isinstance(current, tuple):
            val = tuple(val) if isinstance(val, (list, tuple)) else (val,)
            if current and all(isinstance(c, float) for c in current):
                val = tuple(float(v) for v in val)
        setattr(target, key, val)
