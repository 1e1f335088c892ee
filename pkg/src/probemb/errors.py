"""Exception types shared across the package.

Every error raised on bad user input derives from InputError so the CLI can
map the whole family to a single exit code; numerical failures during
optimization are kept separate because they signal a different kind of
problem (exit code 3 rather than 2).
"""


class ProbembError(Exception):
    """Base class for all package-specific errors."""


class InputError(ProbembError, ValueError):
    """Base class for errors caused by invalid inputs or files."""


class DomainError(InputError):
    """A value lies outside the mathematical domain of an operation."""


class ShapeError(InputError):
    """Array dimensions do not match what an operation requires."""


class FormatError(InputError):
    """A binary file is malformed. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ValidationError(InputError):
    """Structurally readable data that violates a semantic constraint.

    For line-oriented files ``line`` is the 1-based line number.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateInputError(InputError):
    """A statistic is undefined for this input (e.g. a constant sequence)."""


class ContractViolationError(ProbembError, RuntimeError):
    """An API was used outside its contract (e.g. a stale backward cache)."""


class NumericalError(ProbembError, ArithmeticError):
    """A non-finite value appeared during optimization.

    ``context`` identifies where (epoch, batch, loss term) it happened.
    """

    def __init__(self, message: str, context: dict | None = None):
        super().__init__(message)
        self.context = dict(context or {})
