"""Exception types shared across the package."""


class FusedescError(Exception):
    """Base class for all package errors."""


class DimensionError(FusedescError):
    """Operand shapes are incompatible with the requested operation."""


class BoundsError(FusedescError):
    """A requested count or index exceeds what the operand provides."""


class DegenerateInputError(FusedescError):
    """Input is mathematically unusable (e.g. zero-norm vector)."""


class ConfigurationError(FusedescError):
    """A network configuration is invalid or disagrees with parameter shapes."""


class UninitializedStatisticsError(FusedescError):
    """Batch-norm running statistics were requested before any training step."""


class EmptyTapeError(FusedescError):
    """Backward pass requested on a tape with no recorded operations."""


class DatasetError(FusedescError):
    """Dataset contents cannot satisfy the request (missing classes, counts, ...)."""


class EvaluationError(FusedescError):
    """Scored pairs cannot be evaluated (single class, mismatched runs, ...)."""


class TrainingDivergedError(FusedescError):
    """Training produced a non-finite loss."""


class CompatibilityError(FusedescError):
    """Two artifact files disagree (descriptor width, kind, config shapes)."""


class FormatError(FusedescError):
    """A serialized file is malformed. ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int | None = None, path=None):
        self.offset = offset
        self.path = path
        where = ""
        if path is not None:
            where += f" in {path}"
        if offset is not None:
            where += f" at byte {offset}"
        super().__init__(message + where)
