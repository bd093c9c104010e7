"""Exception types raised across the package."""


class MistpError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(MistpError, ValueError):
    """A vector or matrix does not have the expected dimensions."""


class InvalidMinibatchError(MistpError, ValueError):
    """Minibatch indices are out of range, repeated, or badly sized."""


class InvalidLabelError(MistpError, ValueError):
    """A classification label is outside {-1, +1}."""


class UnsupportedMethodError(MistpError, ValueError):
    """The requested operation needs a capability the problem lacks."""


class NumericFailureError(MistpError, ArithmeticError):
    """All candidate function values at a step were non-finite."""


class InstanceTooLargeError(MistpError, ValueError):
    """An exact enumeration would exceed the desk-scale subset budget."""


class BoundInfeasibleError(MistpError, ValueError):
    """Complexity-bound preconditions are violated (noise too large or
    stepsize outside the admissible interval)."""


class ParseError(MistpError, ValueError):
    """A dataset file is malformed; the message carries the line number
    or byte offset where parsing failed."""


class NoViableStepsizeError(MistpError, RuntimeError):
    """Every stepsize in the grid-search produced a diverged pilot run."""
