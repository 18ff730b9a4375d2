"""Line-based ``key = value`` reader with ``[section]`` headers.

Unlike :mod:`configparser` this keeps the line number of every entry, allows
repeated keys (the scenario schedule relies on that) and never interpolates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Parse or validation failure, optionally tied to a source line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.message = message


@dataclass
class Entry:
    key: str
    value: str
    line: int


@dataclass
class Section:
    name: str
    line: int
    entries: list[Entry] = field(default_factory=list)

    def get(self, key: str, default: str | None = None) -> str | None:
        for e in reversed(self.entries):
            if e.key == key:
                return e.value
        return default

    def entry(self, key: str) -> Entry | None:
        for e in reversed(self.entries):
            if e.key == key:
                return e
        return None

    def keys(self) -> list[str]:
        return [e.key for e in self.entries]

    def float(self, key: str, default: float | None = None) -> float | None:
        e = self.entry(key)
        if e is None:
            return default
        return parse_float(e.value, e.line, key)

    def int(self, key: str, default: int | None = None) -> int | None:
        e = self.entry(key)
        if e is None:
            return default
        try:
            return int(e.value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {e.value!r}", e.line) from None

    def bool(self, key: str, default: bool | None = None) -> bool | None:
        e = self.entry(key)
        if e is None:
            return default
        v = e.value.lower()
        if v in ("on", "true", "yes", "1"):
            return True
        if v in ("off", "false", "no", "0"):
            return False
        raise ConfigError(f"{key}: expected on/off, got {e.value!r}", e.line)


def parse_float(text: str, line: int | None = None, key: str = "value") -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}", line) from None


def parse_text(text: str) -> list[Section]:
    """Parse INI-like text. Entries before any header go to section ``""``."""
    sections = [Section("", 0)]
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            sections.append(Section(line[1:-1].strip(), lineno))
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError("empty key", lineno)
        sections[-1].entries.append(Entry(key, value.strip(), lineno))
    if not sections[0].entries:
        sections.pop(0)
    return sections


def parse_file(path: str | Path) -> list[Section]:
    return parse_text(Path(path).read_text())
