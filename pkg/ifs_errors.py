import functools
from typing import Any, Optional, Tuple

import numpy as np


class IFSError(Exception):
    """Custom exception for convex-IFS errors."""
    pass


class DimensionMismatchError(IFSError, ValueError):
    """Points or point sets of different dimension were combined."""
    pass


class MapError(IFSError, ValueError):
    """Invalid map descriptor or word."""
    pass


class MapOutOfBoxError(MapError):
    """A map sends part of the domain box outside of it."""

    def __init__(self, message: str, symbol: Optional[str] = None) -> None:
        super().__init__(message)
        self.symbol = symbol


class CoefficientError(IFSError, ValueError):
    """Malformed coefficient table."""
    pass


class AlphaConditionError(CoefficientError):
    """Condition alpha fails: some d_ij = a_ij + b_ij + c_ij is >= 1."""

    def __init__(self, message: str, i: str, j: str, d_ij: float) -> None:
        super().__init__(message)
        self.i = i
        self.j = j
        self.d_ij = d_ij


class NonConvergenceError(IFSError):
    """An iteration ran out of steps before meeting its tolerance."""

    def __init__(self, message: str, iterations: int, last_state: Any = None) -> None:
        super().__init__(message)
        self.iterations = iterations
        self.last_state = last_state


class BudgetExceededError(IFSError):
    """An exhaustive enumeration would exceed the configured budget."""
    pass


class ConfigError(IFSError, ValueError):
    """Malformed system configuration; location points at the offending key."""

    def __init__(self, message: str, location: str = "") -> None:
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class NumericError(IFSError, ArithmeticError):
    """Overflow or invalid floating point operation while evaluating a map."""
    pass


_NUMERIC_EXCEPTIONS: Tuple[type, ...] = (FloatingPointError, OverflowError, np.linalg.LinAlgError)


def handle_numeric_exception(func):
    """Decorator turning numpy floating point failures into NumericError."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs) -> Optional[Any]:
        try:
            with np.errstate(over='raise', invalid='raise', divide='raise'):
                return func(*args, **kwargs)
        except IFSError:
            raise
        except _NUMERIC_EXCEPTIONS as exc:
            raise NumericError(f"Numeric failure in {func.__name__}: {exc}") from exc
    return wrapper
