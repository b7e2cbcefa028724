"""Config files: TOML, or flat ``key = value`` lines as a fallback."""

from __future__ import annotations

import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _coerce(text: str):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_flat(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ValueError(f"line {n}: expected key = value")
        key, value = line.split(sep, 1)
        out[key.strip()] = _coerce(value)
    return out


def load_config(path: str | os.PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError:
        return parse_flat(text)
