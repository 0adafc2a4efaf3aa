"""Exception types shared across the pipeline."""


class ZeroNormRowError(ValueError):
    """A row whose L2 norm is (numerically) zero cannot be normalized."""

    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"row {index} has zero norm")


class ZeroNormOutputError(ValueError):
    """The pre-normalization output of the embedding collapsed to zero."""


class DimensionMismatchError(ValueError):
    """Operands disagree on n or d."""


class ShapeMismatchError(ValueError):
    """A gradient or cache does not match the shapes it was produced for."""


class IndexOutOfRangeError(IndexError):
    """A label lies outside 0..n-1."""


class InvalidGammaError(ValueError):
    """Hard-negative fraction must lie in (0, 1]."""


class NonFiniteGradientError(FloatingPointError):
    """A gradient contains NaN or infinity; the step is refused."""


class EmptyGalleryError(ValueError):
    """Retrieval needs at least one gallery row."""


class QueryIdentityMissingError(ValueError):
    """A query identity has no gallery entry, so its rank is undefined."""


class CentroidRejectionExhaustedError(RuntimeError):
    """Could not place identity centroids with the required separation."""
