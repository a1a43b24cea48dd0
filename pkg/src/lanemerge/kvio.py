"""Plain-text key-value config files.

All on-disk configs in this package (parameter distributions, classifier
weights, planner configs, scenario files, run manifests) share one trivial
format:

    # comment
    key = value
    vector.key = 1.0 2.0 3.0

Keys are case-sensitive, one per line, `=`-separated. Values are kept as
strings; callers parse them with the helpers below. Duplicate keys are an
error so a mangled file fails loudly instead of silently shadowing.
"""

from __future__ import annotations

import os


class KvError(ValueError):
    """Malformed key-value file."""


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    """Parse a key-value file into an ordered dict of raw strings."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise KvError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise KvError(f"{path}:{lineno}: empty key")
            if key in out:
                raise KvError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def write_kv(path: str | os.PathLike, items: dict[str, str], header: str | None = None) -> None:
    """Write items as `key = value` lines (insertion order, LF endings)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for key, value in items.items():
            fh.write(f"{key} = {value}\n")


def format_floats(values) -> str:
    """Render a float sequence losslessly (repr round-trips exactly)."""
    return " ".join(repr(float(v)) for v in values)


def parse_floats(text: str, expect: int | None = None) -> list[float]:
    values = [float(tok) for tok in text.split()]
    if expect is not None and len(values) != expect:
        raise KvError(f"expected {expect} floats, got {len(values)}: {text!r}")
    return values


def require(kv: dict[str, str], key: str, path: str = "<kv>") -> str:
    if key not in kv:
        raise KvError(f"{path}: missing required key {key!r}")
    return kv[key]
