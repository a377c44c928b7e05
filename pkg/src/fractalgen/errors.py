"""Exception types shared across the package."""


class FractalGenError(Exception):
    """Base class for all package errors."""


class ShapeError(FractalGenError):
    """Raised when tensor or graph shapes are incompatible."""


class DegenerateBatchError(FractalGenError):
    """Raised when batch statistics cannot be computed (train-mode batch of size < 2)."""


class LabelError(FractalGenError):
    """Raised when a class label is outside ``[0, num_classes)``."""


class FormatError(FractalGenError):
    """Raised for malformed dataset or checkpoint files."""


class EmptyDatasetError(FractalGenError):
    pass


class EmptyResultsError(FractalGenError):
    pass


class UnknownModelError(FractalGenError, KeyError):
    pass
