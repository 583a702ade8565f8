"""Exception types shared across the package.

The solver and data errors carry enough context (condition numbers, row
indices) to make batch failures actionable without re-running.
"""

__all__ = [
    "KernelvalError",
    "InputError",
    "CapabilityError",
    "DataError",
    "SolverError",
]


class KernelvalError(Exception):
    """Base class for package errors."""


class InputError(KernelvalError, ValueError):
    """Malformed user input: bad shapes, unknown identifiers, bad config."""


class CapabilityError(KernelvalError, NotImplementedError):
    """Request outside the supported envelope (e.g. feature expansion too large)."""


class DataError(KernelvalError):
    """Invalid numerical data, e.g. non-finite payoff values."""

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = indices


class SolverError(KernelvalError):
    """Linear-algebra failure; carries an estimated condition number when known."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number
