"""
Exception hierarchy shared by every module.

- InputError: malformed files, out-of-range values, inconsistent shapes or configs.
- NumericError: singular matrices and other numerical failures.
The CLI maps InputError to exit code 1 and NumericError to exit code 2.
"""

from typing import Optional


class EmotionDynamicsError(Exception):
    """Base class for all project errors."""


class InputError(EmotionDynamicsError, ValueError):
    """Invalid input data, dimensions or configuration."""


class NumericError(EmotionDynamicsError, ArithmeticError):
    """Numerical failure, optionally tied to a time step."""

    def __init__(self, message: str, step: Optional[int] = None):
        if step is not None:
            message = f"t={step}: {message}"
        super().__init__(message)
        self.step = step


class UndefinedCorrelationError(NumericError):
    """Pearson correlation is undefined (zero variance input)."""
