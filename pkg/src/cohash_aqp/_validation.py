"""Small argument checks shared across modules."""

from __future__ import annotations

import numbers


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value


def check_nonneg(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or value < 0:
        raise ValueError(f"{name} must be non-negative, got {value!r}")
    return value


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_probability(value, name: str, *, open_low: bool = False, open_high: bool = False) -> float:
    """Check ``value`` lies in [0, 1], optionally excluding either end."""
    if not isinstance(value, numbers.Real):
        raise ValueError(f"{name} must be a number, got {value!r}")
    low_ok = value > 0 if open_low else value >= 0
    high_ok = value < 1 if open_high else value <= 1
    if not (low_ok and high_ok):
        raise ValueError(f"{name} out of range: {value!r}")
    return float(value)
