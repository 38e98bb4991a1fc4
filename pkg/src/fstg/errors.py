"""Exception hierarchy. Each error carries the CLI exit code of its class."""


class FstgError(Exception):
    exit_code = 1


class ConfigInvalid(FstgError, ValueError):
    exit_code = 2


class MissingInput(FstgError, FileNotFoundError):
    exit_code = 3


class NumericFailure(FstgError, ArithmeticError):
    exit_code = 4


# volume io
class MalformedHeader(FstgError, ValueError):
    exit_code = 2


class UnsupportedDatatype(MalformedHeader):
    pass


class NonFinite(NumericFailure):
    pass


class IoFailure(FstgError, OSError):
    exit_code = 3


class DegenerateTarget(FstgError, ValueError):
    exit_code = 2


# preprocess
class EmptyMask(FstgError, ValueError):
    exit_code = 4


class DegenerateIntensity(NumericFailure):
    pass


# harmonizer / cnn
class BadGeometry(FstgError, ValueError):
    exit_code = 2


class ShapeMismatch(BadGeometry):
    pass


class Divergence(NumericFailure):
    pass


# features / shallow learners
class EmptyStack(FstgError, ValueError):
    exit_code = 4


class LengthMismatch(FstgError, ValueError):
    exit_code = 2


class DimensionMismatch(LengthMismatch):
    pass


class MalformedRecord(FstgError, ValueError):
    exit_code = 2


class DegenerateData(NumericFailure):
    pass


class SingleClass(FstgError, ValueError):
    exit_code = 4


class UndefinedMetric(NumericFailure):
    pass
