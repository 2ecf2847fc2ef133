"""Flat ``key = value`` config files mapped onto :class:`ModelConfig`."""

from __future__ import annotations

import dataclasses
from pathlib import Path

from ..errors import ConfigError
from ..pipeline import ModelConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: str, default):
    raw = raw.strip().strip('"').strip("'")
    if isinstance(default, bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_pairs(lines, base: dict | None = None) -> dict:
    """Parse ``key = value`` lines (``#`` starts a comment) into typed values."""
    defaults = {f.name: f.default for f in dataclasses.fields(ModelConfig)}
    out = dict(base or {})
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value, defaults[key])
    return out


def config_from_text(text: str, overrides=()) -> ModelConfig:
    values = parse_pairs(text.splitlines())
    values = parse_pairs(overrides, values)
    return ModelConfig(**values)


def load_config(path, overrides=()) -> ModelConfig:
    return config_from_text(Path(path).read_text(), overrides)


def dump_config(cfg: ModelConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
