"""Exception hierarchy shared across the package."""


class TokenBudgetError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(TokenBudgetError, ValueError):
    """A caller-supplied parameter violates an operation's preconditions."""


class CurationError(TokenBudgetError, ValueError):
    """Raised when a raw sample or prompt cannot be curated safely."""


class BackendError(TokenBudgetError):
    """A generation backend failed after exhausting its recovery options."""


class UndefinedMetricError(TokenBudgetError):
    """A metric was requested over a trace set that cannot define it."""


class CurriculumExhausted(TokenBudgetError):
    """The staged portion of a curriculum ran out and no mixed phase follows."""
