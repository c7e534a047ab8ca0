"""Typed attribute/measure values: coercion from source text, canonical text
form for headers and exports, and the checks the store enforces."""

from __future__ import annotations

import datetime as dt

from .model import ValueKind

Value = None | int | float | str | dt.date | dt.datetime


class ValueKindError(ValueError):
    """A value does not fit its declared kind."""


def parse_typed(text: str, kind: ValueKind) -> Value:
    """Parse source text into the declared kind; raises ValueKindError on junk."""
    text = text.strip()
    try:
        if kind is ValueKind.TEXT:
            return text
        if kind is ValueKind.INTEGER:
            return int(text)
        if kind is ValueKind.DECIMAL:
            return float(text)
        if kind is ValueKind.DATE:
            return dt.date.fromisoformat(text)
        if kind is ValueKind.TIMESTAMP:
            return dt.datetime.fromisoformat(text)
        if kind is ValueKind.DOCUMENT_REF:
            return int(text)
    except ValueError as exc:
        raise ValueKindError(f"cannot parse {text!r} as {kind.value}") from exc
    raise ValueKindError(f"unsupported kind {kind!r}")


def coerce(value: Value, kind: ValueKind) -> Value:
    """Coerce an already-typed value to its declared kind (int -> float for
    decimals, ISO strings for temporal kinds); None passes through."""
    if value is None:
        return None
    if isinstance(value, str) and kind not in (ValueKind.TEXT,):
        return parse_typed(value, kind)
    if kind is ValueKind.TEXT:
        if not isinstance(value, str):
            raise ValueKindError(f"expected text, got {type(value).__name__}")
        return value
    if kind is ValueKind.INTEGER or kind is ValueKind.DOCUMENT_REF:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueKindError(f"expected integer, got {value!r}")
        return value
    if kind is ValueKind.DECIMAL:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueKindError(f"expected decimal, got {value!r}")
        return float(value)
    if kind is ValueKind.DATE:
        if isinstance(value, dt.datetime) or not isinstance(value, dt.date):
            raise ValueKindError(f"expected date, got {value!r}")
        return value
    if kind is ValueKind.TIMESTAMP:
        if not isinstance(value, dt.datetime):
            raise ValueKindError(f"expected timestamp, got {value!r}")
        return value
    raise ValueKindError(f"unsupported kind {kind!r}")


def canonical_text(value: Value) -> str:
    """Deterministic text form used for axis headers and delimited exports.

    Dates and timestamps render ISO-8601; decimals use Python float repr.
    """
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, dt.datetime):
        return value.isoformat(sep="T")
    if isinstance(value, dt.date):
        return value.isoformat()
    raise ValueKindError(f"no canonical text for {value!r}")
