"""Exception hierarchy shared by every module in the package."""


class MCDError(Exception):
    pass


# autograd
class ShapeMismatch(MCDError, ValueError):
    pass


class DomainError(MCDError, ValueError):
    pass


class NotScalar(MCDError, ValueError):
    pass


class StaleRecord(MCDError, KeyError):
    pass


# nn
class BadSpec(MCDError, ValueError):
    pass


class MissingGrad(MCDError, KeyError):
    pass


# mcd
class ConfigError(MCDError, ValueError):
    pass


class LabelOutOfRange(MCDError, ValueError):
    pass


class BatchSizeMismatch(MCDError, ValueError):
    pass


# data
class DataError(MCDError, ValueError):
    pass


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class CountMismatch(DataError):
    pass


class RaggedRows(DataError):
    pass


class NonNumeric(DataError):
    pass


class DimensionError(DataError):
    pass


# theory
class TooManyFeatures(MCDError, ValueError):
    pass


class EmptyHypothesisSet(MCDError, ValueError):
    pass


class NonBinaryLabels(MCDError, ValueError):
    pass


class EnumerationCapExceeded(MCDError, ValueError):
    pass
