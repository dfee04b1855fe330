"""Parsing helpers for the comma-separated key=value config strings used on the CLI."""

from __future__ import annotations


def parse_kv(text: str) -> dict[str, str]:
    """Parse "a=1,b=x,flag=True" into a string dict; empty text gives {}."""
    out: dict[str, str] = {}
    if not text or not text.strip():
        return out
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise ValueError(f"expected key=value, got {chunk!r}")
        key, value = chunk.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv(pairs: dict[str, object]) -> str:
    return ",".join(f"{k}={v}" for k, v in pairs.items())


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")
