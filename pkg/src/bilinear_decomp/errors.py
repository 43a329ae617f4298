"""Exception hierarchy shared across the package."""


class BilinearError(Exception):
    """Base class for all package errors."""


class DimensionError(BilinearError, ValueError):
    """Operand shapes do not agree."""


class ConvergenceError(BilinearError, RuntimeError):
    """An iterative solver hit its iteration cap.

    ``residual`` holds the off-diagonal (or non-orthogonality) norm at exit.
    """

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class FormatError(BilinearError, ValueError):
    """A file does not follow its binary layout (bad magic, bad header)."""


class TruncatedDataError(FormatError):
    """A payload is shorter than its header promises."""

    def __init__(self, message, expected, actual):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class RankDeficiencyError(BilinearError, ValueError):
    def __init__(self, message, rank):
        super().__init__(message)
        self.rank = rank


class UnsupportedOperationError(BilinearError, ValueError):
    pass


class SizeGuardError(BilinearError, ValueError):
    pass


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    """Declared tensor shapes disagree with the payload or with each other."""
