"""Canonical JSON output.

Every serialized artifact (chain structure, API envelopes, CLI output) goes
through :func:`dumps` so that equal values always produce identical bytes and
floats are rendered in plain decimal notation, never scientific.
"""

from __future__ import annotations

import json
import math
from decimal import Decimal
from typing import Any


def format_float(value: float) -> str:
    """Shortest round-trip decimal rendering of a float, no exponent."""
    if math.isnan(value) or math.isinf(value):
        raise ValueError("NaN/Infinity cannot be serialized to JSON")
    if value == int(value) and abs(value) < 1e16:
        return f"{int(value)}.0"
    text = format(Decimal(repr(value)), "f")
    return text


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays and tuples to plain JSON types."""
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if isinstance(obj, float):
        return obj
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if hasattr(obj, "item") and not hasattr(obj, "__len__"):  # numpy scalar
        return to_jsonable(obj.item())
    if hasattr(obj, "tolist"):  # numpy array
        return to_jsonable(obj.tolist())
    if hasattr(obj, "to_payload"):
        return to_jsonable(obj.to_payload())
    raise TypeError(f"value of type {type(obj).__name__} is not JSON-serializable")


def _emit(obj: Any, parts: list[str], sort_keys: bool) -> None:
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, int):
        parts.append(str(obj))
    elif isinstance(obj, float):
        parts.append(format_float(obj))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        parts.append("{")
        keys = sorted(obj) if sort_keys else list(obj)
        for i, key in enumerate(keys):
            if i:
                parts.append(",")
            parts.append(json.dumps(str(key), ensure_ascii=False))
            parts.append(":")
            _emit(obj[key], parts, sort_keys)
        parts.append("}")
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, item in enumerate(obj):
            if i:
                parts.append(",")
            _emit(item, parts, sort_keys)
        parts.append("]")
    else:
        raise TypeError(f"value of type {type(obj).__name__} is not JSON-serializable")


def dumps(obj: Any, *, sort_keys: bool = False) -> str:
    """Serialize ``obj`` deterministically; call :func:`to_jsonable` first if needed."""
    parts: list[str] = []
    _emit(to_jsonable(obj), parts, sort_keys)
    return "".join(parts)


def dump_bytes(obj: Any, *, sort_keys: bool = False) -> bytes:
    return dumps(obj, sort_keys=sort_keys).encode("utf-8")
