"""Exception hierarchy.

Three families map onto the CLI exit codes: I/O problems (1), validation
problems (2) and numerical failures (3).
"""


class ShapeGenError(Exception):
    """Base class for every error raised by this package."""


class FileFormatError(ShapeGenError, ValueError):
    """A file exists but its content cannot be decoded."""


class CorruptFileError(FileFormatError):
    """Truncated blob, bad magic or hash mismatch."""


class VersionError(FileFormatError):
    """A file was written by an incompatible format version."""


class ValidationError(ShapeGenError, ValueError):
    """Input violates a documented precondition or schema.

    ``path`` locates the offending field (e.g. ``objects.mug.functionals[1].tstamp``).
    """

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class DegenerateMeshError(ValidationError):
    pass


class NumericalError(ShapeGenError, ArithmeticError):
    """Base for failures of a numerical procedure."""


class DegenerateInterpolationError(NumericalError):
    pass


class DegenerateFitError(NumericalError):
    pass


class TrainingDivergedError(NumericalError):
    pass
