"""Error types raised across the workbench.

The CLI maps each family onto an exit code (see ``exit_code_for``).
"""

from typing import Any, Optional

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to an operation."""


class DomainError(ValueError):
    """A value lies outside the domain of an operation (e.g. log of 0)."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or infinite values."""


class ConfigError(ValueError):
    """A run configuration is malformed or names an unknown key."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataFormatError(ValueError):
    """Input data could not be parsed."""


class IdxFormatError(DataFormatError):
    """An IDX file is malformed. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class DataUnavailableError(DataFormatError):
    """A configured dataset file does not exist."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or does not match the module."""


class TrainingDivergedError(ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        message = f"non-finite loss at step {step}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class SampleOptimizationError(ArithmeticError):
    """Input-space optimization hit a non-finite gradient.

    ``last_snapshot`` holds the last batch whose gradient was finite.
    """

    def __init__(self, iteration: int, last_snapshot: np.ndarray):
        self.iteration = iteration
        self.last_snapshot = last_snapshot
        super().__init__(f"non-finite input gradient at iteration {iteration}")


class ArCycleDivergedError(ArithmeticError):
    """An ARCycle loss term became non-finite."""

    def __init__(self, iteration: int, terms: dict[str, Any]):
        self.iteration = iteration
        self.terms = terms
        rendered = ", ".join(f"{name}={value}" for name, value in terms.items())
        super().__init__(f"non-finite loss at iteration {iteration} ({rendered})")


EXIT_CODES: dict[str, int] = {
    "config": 2,
    "data": 3,
    "numerical": 4,
    "io": 5,
    "internal": 1,
}


def error_category(error: BaseException) -> str:
    """Name the diagnostic category for an exception."""
    if isinstance(error, ConfigError):
        return "config"
    if isinstance(error, (DataFormatError, CheckpointError, ShapeError)):
        return "data"
    if isinstance(error, (ArithmeticError, DomainError)):
        return "numerical"
    if isinstance(error, OSError):
        return "io"
    return "internal"


def exit_code_for(error: BaseException) -> int:
    return EXIT_CODES[error_category(error)]
