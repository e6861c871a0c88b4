"""Flat ``key = value`` config files with ``#`` comments."""

from __future__ import annotations

import os

from .errors import IoError, ParseError


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ParseError(f"{source}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def read_kv(path) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_kv(fh.read(), str(path))
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc


def format_kv(values: dict, header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    lines.extend(f"{k} = {v}" for k, v in values.items())
    return "\n".join(lines) + "\n"


def write_kv(values: dict, path, header: str | None = None) -> None:
    path = os.fspath(path)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(format_kv(values, header))
    except OSError as exc:
        raise IoError(f"cannot write config {path}: {exc}") from exc
