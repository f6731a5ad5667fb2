from __future__ import annotations

__all__ = (
    "BaseBounceException",
    "InvalidConfigException",
    "DimensionMismatchException",
    "PolytopeException",
    "PolytopeFormatException",
    "SamplerException",
    "EssException",
    "ScheduleException",
    "BudgetException",
)


class BaseBounceException(Exception):
    """Base bounceVol Exception class.

    All bounceVol exceptions derive from this exception.
    """


class InvalidConfigException(BaseBounceException):
    """Exception raised when a configuration value is out of its valid range.

    Attributes
    ----------
    field: str | None
        The name of the offending field. Could be None.
    """

    def __init__(self, msg: str | None = None, *, field: str | None = None) -> None:
        super().__init__(msg)

        self.field = field


class DimensionMismatchException(BaseBounceException):
    """Exception raised when a vector does not have the length the polytope expects.

    Attributes
    ----------
    expected: int
        The expected length.
    received: int
        The length that was received.
    """

    def __init__(self, msg: str | None = None, /, *, expected: int, received: int) -> None:
        self.expected = expected
        self.received = received

        if not msg:
            msg = f"Dimension mismatch: expected a vector of length {expected}, received length {received}"

        super().__init__(msg)


class PolytopeException(BaseBounceException):
    """Exception raised when a :class:`HPolytope` would violate one of its invariants."""


class PolytopeFormatException(PolytopeException):
    """Exception raised when a polytope file can not be parsed.

    Attributes
    ----------
    line: int | None
        The 1-based line number the error was found on. Could be None for errors about the whole file.
    reason: str
        What was wrong with the line.
    """

    def __init__(self, reason: str, /, *, line: int | None = None) -> None:
        self.reason = reason
        self.line = line

        msg = f"Failed to parse polytope: {reason}"
        if line is not None:
            msg = f"Failed to parse polytope at line {line}: {reason}"

        super().__init__(msg)


class SamplerException(BaseBounceException):
    """Exception raised when the sampler is driven into a state it can not continue from.

    This usually signals a logic error in the caller, e.g. reflecting an incoming velocity.
    """


class EssException(BaseBounceException):
    """Exception raised when an effective sample size can not be computed for a series."""


class ScheduleException(BaseBounceException):
    """Exception raised when the initial Gaussian can not be bracketed."""


class BudgetException(BaseBounceException):
    """Exception raised when the sample budget is too small for the schedule.

    Attributes
    ----------
    budget: int
        The configured budget.
    required: int
        The minimum budget needed for the schedule.
    """

    def __init__(self, msg: str | None = None, /, *, budget: int, required: int) -> None:
        self.budget = budget
        self.required = required

        if not msg:
            msg = (
                f"Sample budget {budget} is smaller than the {required} estimation phases of the schedule, "
                f"increase N to at least {required}"
            )

        super().__init__(msg)
