"""Exception hierarchy.

Validation-type failures derive from :class:`ValidationError` and numerical
ones from :class:`NumericalFailure`; the command line maps the two families
to exit codes 2 and 3.
"""


class PhotoQSTError(Exception):
    pass


class ValidationError(PhotoQSTError, ValueError):
    pass


class NumericalFailure(PhotoQSTError, RuntimeError):
    pass


class StructuralError(ValidationError):
    """Array shapes or grids do not line up."""


class ConfigurationError(ValidationError):
    pass


class DegenerateInputError(ValidationError):
    pass


class PlacementError(ValidationError):
    """A beat energy does not land close enough to a subdiagonal."""


class IllConditionedDesignError(ValidationError):
    pass


class EmptyOverlapError(ValidationError):
    pass


class DataValidationError(ValidationError):
    pass


class InsufficientSamplesError(ValidationError):
    pass


class NumericalError(NumericalFailure):
    pass


class TuningError(NumericalFailure):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
