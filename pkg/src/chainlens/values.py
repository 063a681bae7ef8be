"""Typed values exchanged between blocks and wrapped into API envelopes."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from .errors import TypeMismatch

#: Tags a value can carry through the pipeline and out of the API.
DATA_TYPES = ("scalar", "vector", "table", "row", "attribution", "text", "structure")

#: Semantic types a method parameter can declare.
PARAM_TYPES = ("number", "integer", "text", "boolean", "row", "table")

#: Which value tags satisfy which declared parameter type. A decision record
#: (tag "structure") is accepted where a row is expected so guards and bombs
#: can consume upstream predictions; parallel fan-in (tag "vector"/"table")
#: feeds aggregator parameters declared as "table".
_PARAM_ACCEPTS = {
    "number": ("scalar",),
    "integer": ("scalar",),
    "boolean": ("scalar",),
    "text": ("text",),
    "row": ("row", "structure"),
    "table": ("table", "vector"),
}


def _is_scalar(value: Any) -> bool:
    return isinstance(value, (bool, int, float)) and not isinstance(value, complex)


def infer_data_type(payload: Any) -> str:
    if isinstance(payload, str):
        return "text"
    if _is_scalar(payload):
        return "scalar"
    if isinstance(payload, dict):
        if payload and all(_is_scalar(v) or isinstance(v, str) or v is None for v in payload.values()):
            return "row"
        return "structure"
    if isinstance(payload, (list, tuple)):
        if payload and all(_is_scalar(v) for v in payload):
            return "vector"
        return "table"
    return "structure"


def payload_matches(data_type: str, payload: Any) -> bool:
    """Shape check used by envelope validation."""
    if data_type == "scalar":
        return _is_scalar(payload)
    if data_type == "text":
        return isinstance(payload, str)
    if data_type == "row":
        return isinstance(payload, dict)
    if data_type == "vector":
        return isinstance(payload, (list, tuple)) and all(_is_scalar(v) or v is None for v in payload)
    if data_type == "table":
        return isinstance(payload, (list, tuple))
    if data_type == "attribution":
        return isinstance(payload, dict) and "values" in payload
    if data_type == "structure":
        return True
    return False


@dataclass
class TypedValue:
    """A payload plus the tag telling consumers how to interpret it."""

    data_type: str
    payload: Any

    @staticmethod
    def wrap(payload: Any, declared: str | None = None) -> "TypedValue":
        if isinstance(payload, TypedValue):
            return payload
        if declared in DATA_TYPES:
            return TypedValue(declared, payload)
        return TypedValue(infer_data_type(payload), payload)


def check_param(method: str, param: str, param_type: str, value: Any) -> Any:
    """Validate a raw JSON argument against a declared parameter type.

    Returns the (possibly coerced) value or raises :class:`TypeMismatch`
    naming the offending parameter.
    """
    if param_type == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeMismatch(method, param, f"parameter '{param}' expects a number")
        return float(value)
    if param_type == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeMismatch(method, param, f"parameter '{param}' expects an integer")
        return value
    if param_type == "boolean":
        if not isinstance(value, bool):
            raise TypeMismatch(method, param, f"parameter '{param}' expects a boolean")
        return value
    if param_type == "text":
        if not isinstance(value, str):
            raise TypeMismatch(method, param, f"parameter '{param}' expects text")
        return value
    if param_type == "row":
        if not isinstance(value, dict):
            raise TypeMismatch(method, param, f"parameter '{param}' expects an object")
        return value
    if param_type == "table":
        if not isinstance(value, (list, tuple)):
            raise TypeMismatch(method, param, f"parameter '{param}' expects an array")
        return list(value)
    raise TypeMismatch(method, param, f"unknown parameter type '{param_type}'")


def parse_query_param(method: str, param: str, param_type: str, raw: str) -> Any:
    """Parse a query-string value (always text on the wire) per declared type."""
    try:
        if param_type == "number":
            return float(raw)
        if param_type == "integer":
            return int(raw)
        if param_type == "boolean":
            if raw.lower() in ("true", "1"):
                return True
            if raw.lower() in ("false", "0"):
                return False
            raise ValueError(raw)
        if param_type == "text":
            return raw
        if param_type in ("row", "table"):
            return check_param(method, param, param_type, json.loads(raw))
    except TypeMismatch:
        raise
    except (ValueError, json.JSONDecodeError):
        raise TypeMismatch(method, param, f"parameter '{param}' could not be parsed as {param_type}") from None
    raise TypeMismatch(method, param, f"unknown parameter type '{param_type}'")


def accepts_value(param_type: str, value: TypedValue) -> bool:
    """Whether a pipeline value may bind to a method's first parameter."""
    tags = _PARAM_ACCEPTS.get(param_type, ())
    if value.data_type not in tags:
        return False
    if param_type == "integer":
        return isinstance(value.payload, int) and not isinstance(value.payload, bool)
    if param_type == "boolean":
        return isinstance(value.payload, bool)
    if param_type == "number":
        return not isinstance(value.payload, bool)
    return True
