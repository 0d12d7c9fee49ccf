"""Exception hierarchy shared by all modules."""


class NofeError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(NofeError, ValueError):
    """Invalid input: wrong shapes, out-of-range parameters, degenerate data."""


class NumericError(NofeError, ArithmeticError):
    """A computation produced a non-finite value."""


class FileFormatError(ValidationError):
    """A dataset or checkpoint file could not be decoded."""


class VersionError(FileFormatError):
    pass


class TruncatedError(FileFormatError):
    pass


class ShapeError(FileFormatError):
    pass


class LayoutError(FileFormatError):
    """Checkpoint tensor order or shapes disagree with the model layout."""
