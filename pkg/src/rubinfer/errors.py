"""Exception types raised across the package."""


class RubError(Exception):
    """Base class for all library errors."""


class InvalidArgument(RubError, ValueError):
    pass


class DimensionMismatch(RubError, ValueError):
    pass


class RankDeficient(RubError, ArithmeticError):
    pass


class SingularPivot(RubError, ArithmeticError):
    pass


class DegenerateGeometry(RubError, ValueError):
    pass


class MissingKey(RubError, KeyError):
    pass


class TimestampMismatch(RubError, ValueError):
    pass


class UnknownVariable(RubError, KeyError):
    pass


class SeparatorUnresolvable(RubError, RuntimeError):
    pass


class Diverged(RubError, RuntimeError):
    pass


class NoCandidates(RubError, ValueError):
    pass


class ConfigError(RubError, ValueError):
    pass


class ParseError(RubError, ValueError):
    pass
