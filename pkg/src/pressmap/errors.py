"""Exception types shared across the package."""


class PressmapError(Exception):
    """Base class for all package-specific errors."""


class DegenerateRotation(PressmapError):
    """6D rotation input is near-zero or the two axes are parallel."""


class DimensionMismatch(PressmapError):
    pass


class ShapeMismatch(PressmapError):
    pass


class MissingRing(PressmapError):
    pass


class IndexOutOfRange(PressmapError):
    pass


class ConfigInvalid(PressmapError):
    pass


class NegativePressure(PressmapError):
    pass


class GeometryMismatch(PressmapError):
    pass


class NonFinite(PressmapError):
    pass


class EmptyDataset(PressmapError):
    pass


class EmptyMask(PressmapError):
    pass


class NoContact(PressmapError):
    pass


class NoFeaturesEnabled(PressmapError):
    pass
