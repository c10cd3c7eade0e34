"""Exception hierarchy shared by every deep_rtc module."""


class DeepRTCError(Exception):
    """Base class for all deep_rtc failures"""


class TaxonomyError(DeepRTCError, ValueError):
    """Raised when a hierarchy file cannot be turned into a valid tree"""


class CycleError(TaxonomyError):
    pass


class MultipleRootsError(TaxonomyError):
    pass


class UnaryNodeError(TaxonomyError):
    pass


class DuplicateNameError(TaxonomyError):
    pass


class OrphanReferenceError(TaxonomyError):
    pass


class InvalidNodeError(DeepRTCError, ValueError):
    """Raised when a node-id is unknown or not allowed for the operation"""


class ProjectionError(DeepRTCError, ValueError):
    """Raised when a leaf has no member of a label set on its root path"""


class CutBoundExceededError(DeepRTCError, ValueError):
    pass


class DimensionMismatchError(DeepRTCError, ValueError):
    pass


class NonFiniteError(DeepRTCError, ValueError):
    pass


class DatasetError(DeepRTCError, ValueError):
    """Raised when a feature table or split file fails validation"""


class UnknownLabelError(DatasetError):
    pass


class RaggedRowError(DatasetError):
    pass


class InsufficientSamplesError(DatasetError):
    pass


class ConfigError(DeepRTCError, ValueError):
    pass


class DivergenceError(DeepRTCError, RuntimeError):
    """Raised when training produces a non-finite loss or gradient"""
