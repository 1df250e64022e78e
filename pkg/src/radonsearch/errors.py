"""Exception types shared across the package."""


class RadonSearchError(Exception):
    """Base class for every error raised by this package."""


class FormatError(RadonSearchError, ValueError):
    """File content is not in a supported format."""


class ParseError(RadonSearchError, ValueError):
    """A label code string does not follow the 4-axis layout."""


class ValidationError(RadonSearchError, ValueError):
    """Input data violates a documented precondition."""


class ParameterError(RadonSearchError, ValueError):
    """A parameter value is outside its allowed domain."""


class ShapeError(RadonSearchError, ValueError):
    """Array dimensions do not match what an operation expects."""


class DegenerateInputError(RadonSearchError, ValueError):
    """Input carries no usable signal (e.g. zero variance)."""


class StateError(RadonSearchError, RuntimeError):
    """Operation invoked before the state it depends on exists."""


class DivergenceError(RadonSearchError, RuntimeError):
    """Training produced a non-finite loss."""


class EmptyResultError(RadonSearchError, RuntimeError):
    """A query produced no candidates at all."""


class PipelineError(RadonSearchError, RuntimeError):
    """A pipeline phase failed; carries the phase name."""

    def __init__(self, phase: str, message: str):
        super().__init__(f"{phase}: {message}")
        self.phase = phase
