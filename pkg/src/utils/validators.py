"""
Validation utilities for numeric inputs, array shapes and artifact paths.

These helpers raise the application's ValidationError family with the
offending field, value and violated constraint so that CLI users and tests
get the same precise messages.
"""

import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import ShapeMismatchError, ValidationError, CheckpointError


def require_positive(value: float, field: str) -> float:
    """
    Ensure a scalar is strictly positive and finite.

    Args:
        value: Value to check
        field: Field name used in the error

    Returns:
        The value as float

    Raises:
        ValidationError: If the value is not a finite positive number
    """
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise ValidationError(f"{field} must be positive", field=field, value=value, constraint="> 0")
    return value


def require_non_negative(value: float, field: str) -> float:
    """Ensure a scalar is finite and >= 0."""
    value = float(value)
    if not math.isfinite(value) or value < 0.0:
        raise ValidationError(f"{field} must be non-negative", field=field, value=value, constraint=">= 0")
    return value


def require_int_at_least(value: int, minimum: int, field: str) -> int:
    """Ensure an integer is at least ``minimum``."""
    if int(value) != value or value < minimum:
        raise ValidationError(f"{field} must be an integer >= {minimum}", field=field,
                              value=value, constraint=f">= {minimum}")
    return int(value)


def require_in_range(value: float, low: float, high: float, field: str,
                     low_inclusive: bool = True, high_inclusive: bool = True) -> float:
    """
    Ensure a scalar lies in a closed or open interval.

    Args:
        value: Value to check
        low: Lower bound
        high: Upper bound
        field: Field name used in the error
        low_inclusive: Whether ``low`` itself is allowed
        high_inclusive: Whether ``high`` itself is allowed

    Returns:
        The value as float
    """
    value = float(value)
    above = value >= low if low_inclusive else value > low
    below = value <= high if high_inclusive else value < high
    if not (math.isfinite(value) and above and below):
        left = "[" if low_inclusive else "("
        right = "]" if high_inclusive else ")"
        raise ValidationError(f"{field} out of range", field=field, value=value,
                              constraint=f"in {left}{low}, {high}{right}")
    return value


def require_shape(array: np.ndarray, expected: Sequence[Optional[int]], field: str) -> np.ndarray:
    """
    Ensure an array matches a shape pattern (None matches any extent).

    Args:
        array: Array to check
        expected: Expected extents, None as wildcard
        field: Field name used in the error

    Returns:
        The array

    Raises:
        ShapeMismatchError: If rank or any fixed extent differs
    """
    array = np.asarray(array)
    if array.ndim != len(expected) or any(
        e is not None and e != a for e, a in zip(expected, array.shape)
    ):
        raise ShapeMismatchError(f"{field} has the wrong shape", field=field,
                                 expected=[-1 if e is None else e for e in expected],
                                 actual=array.shape)
    return array


def require_file(path: Path, what: str) -> Path:
    """
    Ensure an input artifact exists.

    Args:
        path: Path to check
        what: Artifact description (dataset, dynamics checkpoint, ...)

    Returns:
        The path

    Raises:
        CheckpointError: If the file does not exist
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Missing {what}", path=path, reason="missing")
    return path
