"""Attribute value kinds, canonicalization, and equality.

Canonical forms: text is stripped (case preserved), integers are ``int``,
floats are ``float``, dates are ``datetime.date``, list values are lists of
stripped strings.  Equality is case-insensitive for text and uses a relative
tolerance of 1e-9 for floats.
"""

from __future__ import annotations

import math
from datetime import date, datetime
from enum import Enum

from .errors import TypeMismatch

FLOAT_REL_TOL = 1e-9


class ValueType(str, Enum):
    TEXT = "text"
    INTEGER = "integer"
    FLOAT = "float"
    DATE = "date"
    TEXT_LIST = "list"


def canonicalize(value_type: ValueType, value) -> object:
    """Return the canonical form of ``value`` or raise TypeMismatch.

    Idempotent: feeding a canonical value back returns an equal value.
    """
    if value_type is ValueType.TEXT:
        if not isinstance(value, str):
            raise TypeMismatch(f"expected text, got {type(value).__name__}")
        return value.strip()
    if value_type is ValueType.INTEGER:
        if isinstance(value, bool):
            raise TypeMismatch("expected integer, got bool")
        if isinstance(value, int):
            return value
        if isinstance(value, str):
            try:
                return int(value.strip())
            except ValueError:
                raise TypeMismatch(f"not an integer: {value!r}") from None
        raise TypeMismatch(f"expected integer, got {type(value).__name__}")
    if value_type is ValueType.FLOAT:
        if isinstance(value, bool):
            raise TypeMismatch("expected float, got bool")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value.strip())
            except ValueError:
                raise TypeMismatch(f"not a float: {value!r}") from None
        raise TypeMismatch(f"expected float, got {type(value).__name__}")
    if value_type is ValueType.DATE:
        if isinstance(value, datetime):
            raise TypeMismatch("expected calendar date, got datetime")
        if isinstance(value, date):
            return value
        if isinstance(value, str):
            try:
                return date.fromisoformat(value.strip())
            except ValueError:
                raise TypeMismatch(f"not an ISO-8601 calendar date: {value!r}") from None
        raise TypeMismatch(f"expected date, got {type(value).__name__}")
    if value_type is ValueType.TEXT_LIST:
        if isinstance(value, str) or not isinstance(value, (list, tuple)):
            raise TypeMismatch(f"expected list of text, got {type(value).__name__}")
        out = []
        for item in value:
            if not isinstance(item, str):
                raise TypeMismatch(f"list element is not text: {item!r}")
            out.append(item.strip())
        return out
    raise TypeMismatch(f"unknown value type {value_type!r}")


def values_equal(value_type: ValueType, a, b) -> bool:
    """Equality over canonical values."""
    if value_type is ValueType.TEXT:
        return a.casefold() == b.casefold()
    if value_type is ValueType.FLOAT:
        return math.isclose(a, b, rel_tol=FLOAT_REL_TOL)
    if value_type is ValueType.TEXT_LIST:
        return {x.casefold() for x in a} == {x.casefold() for x in b}
    return a == b


def hash_token(value_type: ValueType, value) -> str:
    """Stable, equality-compatible token for indexing a canonical value."""
    if value_type is ValueType.TEXT:
        return value.casefold()
    if value_type is ValueType.DATE:
        return value.isoformat()
    if value_type is ValueType.FLOAT:
        return repr(value)
    return str(value)


def to_json(value_type: ValueType, value):
    if value_type is ValueType.DATE:
        return value.isoformat()
    return value


def from_json(value_type: ValueType, raw):
    return canonicalize(value_type, raw)


def add_years(day: date, years: int) -> date:
    """Calendar-year shift; Feb 29 clamps to Feb 28 on non-leap targets."""
    try:
        return day.replace(year=day.year + years)
    except ValueError:
        return day.replace(year=day.year + years, day=28)
