"""Flat ``key = value`` text files.

All structured text outputs of the package (sidecar metadata, fitted-model
files, config files, summary dumps) share this one format: one pair per
line, ``#`` comments, insertion order preserved.  Floats are written with
``repr`` so that a write/read cycle reproduces them bit-exactly.
"""

import numpy as np

from .errors import ValidationError


def format_value(value):
    """Render a scalar, string, or 1-D sequence as a kv value string."""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(format_value(v) for v in value)
    raise TypeError(f"cannot serialize value of type {type(value).__name__}")


def parse_floats(text):
    """Parse a comma-separated value string into a float array."""
    text = text.strip()
    if not text:
        return np.zeros(0)
    return np.array([float(tok) for tok in text.split(",")])


def parse_ints(text):
    text = text.strip()
    if not text:
        return []
    return [int(tok) for tok in text.split(",")]


def parse_strings(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(tok.strip() for tok in text.split(","))


def parse_bool(text):
    text = text.strip().lower()
    if text in ("true", "1", "yes"):
        return True
    if text in ("false", "0", "no"):
        return False
    raise ValidationError(f"not a boolean value: {text!r}")


def dumps(items):
    """Serialize an ordered mapping (or pair iterable) to kv text."""
    pairs = items.items() if hasattr(items, "items") else items
    lines = []
    for key, value in pairs:
        if value is None:
            continue
        lines.append(f"{key} = {format_value(value)}")
    return "\n".join(lines) + "\n"


def loads(text, source="<string>"):
    """Parse kv text into a dict of raw value strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ValidationError(f"{source}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def write(path, items):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(items))


def read(path):
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read(), source=str(path))
