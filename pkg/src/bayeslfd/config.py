"""Flat key=value experiment configuration.

Precedence: command-line overrides > config file > built-in defaults.
Value types are inferred from the defaults: ints, floats, bools, strings,
and comma-separated lists thereof.
"""

from __future__ import annotations


def parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ValueError(f"override must look like key=value, got {item!r}")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def _coerce(raw: str, template):
    if isinstance(template, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse {raw!r} as bool")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    if isinstance(template, (list, tuple)):
        elem = template[0] if len(template) else 0
        items = [s.strip() for s in raw.split(",") if s.strip()]
        return [_coerce(s, elem) for s in items]
    return raw


def resolve_config(
    defaults: dict,
    file_values: dict[str, str] | None = None,
    overrides: list[tuple[str, str]] | None = None,
) -> dict:
    cfg = dict(defaults)
    for source in (file_values or {}), dict(overrides or []):
        for key, raw in source.items():
            if key not in defaults:
                raise KeyError(f"unknown config key {key!r}; known: {sorted(defaults)}")
            cfg[key] = _coerce(raw, defaults[key])
    return cfg


def config_echo_lines(cfg: dict, version: str) -> list[str]:
    lines = [f"version={version}"]
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    return lines
