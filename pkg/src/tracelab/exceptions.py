"""Exception hierarchy shared by all tracelab modules."""


class TraceLabError(Exception):
    """Base class for every error raised by tracelab."""


class ContractError(TraceLabError, ValueError):
    """An argument violates a documented precondition."""


class DomainError(TraceLabError, ValueError):
    """A point or window falls outside the admissible parameter domain."""


class ConstructionError(TraceLabError):
    """An object could not be built with its declared invariants."""


class EvaluationError(TraceLabError, ArithmeticError):
    """A pointwise evaluation produced a non-finite value."""


class ResourceError(TraceLabError, MemoryError):
    """A computation would exceed its configured node budget."""


class UnsupportedInputError(TraceLabError):
    """Input lies outside the class of functions handled here."""


class FitError(TraceLabError, ValueError):
    """A log-log fit could not be performed on the given rows."""
