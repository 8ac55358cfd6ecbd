"""Exception hierarchy shared by all halstream modules."""


class HalstreamError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(HalstreamError, ValueError):
    """Input data or configuration violates a documented contract."""


class SchemaError(ValidationError):
    """A required column is missing from an input file."""


class ParseError(ValidationError):
    """A field could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ChronologyError(HalstreamError):
    """Events were presented out of timestamp order."""


class NonFiniteGradientError(HalstreamError, FloatingPointError):
    """An SGD step received a gradient containing NaN or inf."""

    def __init__(self, step, grad_norm):
        super().__init__(f"non-finite gradient at step {step} (norm={grad_norm!r})")
        self.step = step
        self.grad_norm = grad_norm
