"""Exception hierarchy shared by every pipeline stage."""


class IpsError(Exception):
    """Base class for all pipeline errors."""


class IngestionError(IpsError):
    """A required input file is missing or unreadable."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class FormatError(IpsError):
    """Input data parsed but violates a structural invariant."""


class ParseError(IpsError):
    """A text log row could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AlignmentError(IpsError):
    """Requested times fall outside the coverage of a sensor stream."""


class ParameterError(IpsError, ValueError):
    """An argument is outside its documented domain."""


class FittingError(IpsError):
    """A regression could not be computed or did not converge."""

    def __init__(self, message, last_iterate=None, residual_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_norm = residual_norm


class DomainError(IpsError, ValueError):
    """A model was evaluated outside the interval it was fitted on."""


class RenderError(IpsError):
    """A plot could not be produced from the supplied data."""
