"""Deterministic CSV and JSON emission.

Every float is printed with 17 significant digits so the text artifacts
round-trip to the exact binary value and two runs with the same config
produce byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path

__all__ = ["fmt_float", "write_csv", "json_dumps", "write_json"]


def fmt_float(x) -> str:
    """Round-trip-exact decimal rendering of a float."""
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        raise ValueError("refusing to serialize a non-finite float")
    return format(x, ".17g")


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return fmt_float(value)
    if isinstance(value, int):
        return str(value)
    text = str(value)
    if any(ch in text for ch in ',"\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


def write_csv(path, header, rows) -> None:
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _json_escape(text: str) -> str:
    out = []
    for ch in text:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\r":
            out.append("\\r")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return "".join(out)


def _dumps(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    closing = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return fmt_float(obj)
    if isinstance(obj, str):
        return '"' + _json_escape(obj) + '"'
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{pad}"{_json_escape(str(k))}": {_dumps(v, indent, level + 1)}'
            for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + closing + "}"
    if isinstance(obj, (list, tuple)):
        if not len(obj):
            return "[]"
        items = [f"{pad}{_dumps(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + closing + "]"
    # numpy scalars and arrays arrive here
    if hasattr(obj, "tolist"):
        return _dumps(obj.tolist(), indent, level)
    if hasattr(obj, "item"):
        return _dumps(obj.item(), indent, level)
    raise TypeError(f"cannot serialize {type(obj)!r}")


def json_dumps(obj, indent: int = 2) -> str:
    """Serialize to JSON with exact float formatting and stable layout."""
    return _dumps(obj, indent, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(json_dumps(obj))
