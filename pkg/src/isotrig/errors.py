"""Exception hierarchy shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class ExprError(ToolkitError):
    """Invalid expression construction (e.g. division by a constant zero)."""


class ParseError(ExprError):
    """Syntax or identifier error while parsing an expression string."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class DomainError(ToolkitError):
    """Evaluation left the expression's domain (zero denominator, negative base)."""


class MissingVariableError(ToolkitError):
    """An assignment does not cover every free variable of the expression."""


class DimensionError(ToolkitError):
    """Inconsistent dimensions in a control model."""


class InfeasibleChiError(ToolkitError):
    """No coefficient vector passed the independent verification grid."""


class TStarSelectionError(ToolkitError):
    """No grid time yields an approximate isochrone contained in the region."""


class ImmediateTriggerError(ToolkitError):
    """The triggering condition is already nonnegative at the queried state."""


class IntegrationError(ToolkitError):
    """The ODE solver failed (step underflow or non-finite state)."""


class ConfigError(ToolkitError):
    """Invalid run configuration."""
