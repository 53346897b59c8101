"""Exception hierarchy.

Every error raised on bad user data derives from :class:`MrtsError`, which the
CLI maps to exit code 1.
"""


class MrtsError(ValueError):
    """Base class for data and model validation errors."""


class DimensionError(MrtsError):
    """Spatial dimension outside {1, 2, 3}."""


class ShapeError(MrtsError):
    """Array shapes do not line up."""


class DuplicateLocationError(MrtsError):
    """Two control points share exactly the same coordinates."""


class DegenerateGeometryError(MrtsError):
    """Control points are affinely dependent (rank of the design matrix < d + 1)."""


class ConstraintViolationError(MrtsError):
    """Kernel coefficients do not satisfy X' alpha = 0."""


class BasisRangeError(MrtsError):
    """Requested number of basis functions is outside [d + 1, n]."""


class RankExhaustedError(MrtsError):
    """A requested eigenvalue is numerically zero."""


class RankDeficientError(MrtsError):
    """Basis matrix at the control points is not of full column rank."""


class SingularProfileError(MrtsError):
    """Total nugget variance is zero where the profile likelihood needs it positive."""


class CollinearBasisError(MrtsError):
    """Basis functions are linearly dependent on the quadrature grid."""


class NotPositiveDefiniteError(MrtsError):
    """A matrix that must be positive definite is not."""


class SerializationError(MrtsError):
    """A serialized container is malformed or has an unsupported version."""
