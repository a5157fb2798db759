"""Exception types shared across the registration pipeline.

Stage failures that abort a registration attempt (feature extraction,
matching, model estimation, resampling) all derive from RetregError so
callers can map them to a single failure outcome while still telling the
causes apart.
"""


class RetregError(Exception):
    """Base class for every error raised by this package."""


class BoundsError(RetregError, ValueError):
    """A pixel index or absolute index falls outside the raster."""


class InputError(RetregError, ValueError):
    """An argument violates a precondition (shape, dtype, range, enum)."""


class DegenerateInputError(RetregError, ValueError):
    """Geometrically meaningless input, e.g. a line between identical points."""


class WidthUndeterminedError(RetregError):
    """No valid cross-section width could be measured for a branch."""


class NoFeaturesError(RetregError):
    """Matching was requested but one image contributed no usable features."""


class InsufficientMatchesError(RetregError):
    """Fewer candidate matches than the consensus search needs."""


class DegenerateMatchesError(RetregError):
    """No consensus model with the minimum inlier support exists."""


class RegistrationNotPossibleError(RetregError):
    """Fewer inlier correspondences than the simplest model requires."""


class DegenerateGeometryError(RetregError):
    """The correspondence geometry is rank deficient for the selected model."""


class ResampleFailureError(RetregError):
    """The transform cannot be inverted over the output canvas."""


class PhantomSpecError(RetregError, ValueError):
    """A synthetic vessel tree specification violates its invariants."""


class ConfigError(RetregError, ValueError):
    """A configuration key is unknown or carries an invalid value."""
