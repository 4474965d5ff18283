"""Structured text reports: ``[section]`` headers with ``key = value`` lines.

Floats are written with ``repr`` so they read back exactly; sequences are
comma separated; ``none`` marks an absent optional value.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

from ..errors import FormatError

HEADER = "# catpan report v1"


def _fmt(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    text = str(value)
    if "\n" in text:
        raise ValueError("report values must be single-line")
    return text


def _parse_scalar(text: str):
    if text == "none":
        return None
    if text in ("true", "false"):
        return text == "true"
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def _parse(text: str):
    if "," in text:
        return [_parse_scalar(t) for t in text.split(",")]
    return _parse_scalar(text)


def dumps(sections: dict[str, dict[str, Any]]) -> str:
    lines = [HEADER]
    for name, values in sections.items():
        lines.append(f"[{name}]")
        for key, value in values.items():
            lines.append(f"{key} = {_fmt(value)}")
        lines.append("")
    return "\n".join(lines)


def loads(text: str) -> dict[str, dict[str, Any]]:
    sections: dict[str, dict[str, Any]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = sections.setdefault(line[1:-1], {})
            continue
        if current is None or "=" not in line:
            raise FormatError("line", f"{lineno}: expected 'key = value' inside a section, got {raw!r}")
        key, _, value = line.partition("=")
        current[key.strip()] = _parse(value.strip())
    return sections


def write_report(path, sections: dict[str, dict[str, Any]]) -> None:
    Path(path).write_text(dumps(sections), encoding="utf-8")


def read_report(path) -> dict[str, dict[str, Any]]:
    return loads(Path(path).read_text(encoding="utf-8"))


def config_sections(cfg) -> dict[str, dict[str, Any]]:
    """Resolved config sections, prefixed so they cannot clash with results."""
    return {f"config.{name}": values for name, values in cfg.sections().items()}
