"""Line-oriented key=value configuration files with [section] headers.

The format is deliberately tiny so configs stay diffable and byte-exactly
specifiable:

    # comment
    [section]
    key = value

Keys may not repeat within a section.  Parse errors carry the line number.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration file or configuration contents."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


Sections = dict[str, dict[str, str]]


def parse_config_text(text: str) -> Sections:
    sections: Sections = {}
    current: dict[str, str] | None = None
    current_name = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError("empty section name", lineno)
            if name in sections:
                raise ConfigError(f"duplicate section [{name}]", lineno)
            current = {}
            current_name = name
            sections[name] = current
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        if current is None:
            raise ConfigError("key/value pair before any [section]", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError("empty key", lineno)
        if key in current:
            raise ConfigError(
                f"duplicate key {key!r} in section [{current_name}]", lineno
            )
        current[key] = value
    return sections


def load_config(path: str | Path) -> Sections:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text)


def format_config(sections: Sections) -> str:
    """Canonical text for a section mapping (insertion order preserved)."""
    lines: list[str] = []
    for name, body in sections.items():
        lines.append(f"[{name}]")
        for key, value in body.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def write_config(sections: Sections, path: str | Path) -> None:
    Path(path).write_text(format_config(sections))


_REQUIRED = object()


class SectionReader:
    """Typed accessors over one parsed section with leftover-key detection."""

    def __init__(self, name: str, values: dict[str, str] | None):
        self.name = name
        self._values = dict(values or {})
        self._seen: set[str] = set()

    def _raw(self, key: str, default):
        self._seen.add(key)
        if key in self._values:
            return self._values[key]
        if default is _REQUIRED:
            raise ConfigError(f"[{self.name}] is missing required key {key!r}")
        return None

    def _convert(self, key: str, converter, default):
        raw = self._raw(key, default)
        if raw is None:
            return default
        try:
            return converter(raw)
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key} = {raw!r}: {exc}") from exc

    def get_str(self, key: str, default=_REQUIRED) -> str:
        raw = self._raw(key, default)
        return default if raw is None else raw

    def get_int(self, key: str, default=_REQUIRED) -> int:
        return self._convert(key, int, default)

    def get_float(self, key: str, default=_REQUIRED) -> float:
        return self._convert(key, float, default)

    def get_bool(self, key: str, default=_REQUIRED) -> bool:
        def to_bool(raw: str) -> bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")

        return self._convert(key, to_bool, default)

    def check_consumed(self) -> None:
        leftover = sorted(set(self._values) - self._seen)
        if leftover:
            raise ConfigError(
                f"unknown keys in section [{self.name}]: {', '.join(leftover)}"
            )
