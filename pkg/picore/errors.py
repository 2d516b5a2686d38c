"""
Error types raised by picore.

Configuration problems subclass ValueError and numerical failures subclass
ArithmeticError, so callers can catch either family without importing picore.
The CLI maps them to exit codes 2 and 3.
"""


class PicoreError(Exception):
    pass


class ConfigError(PicoreError, ValueError):
    exit_code = 2


class GridError(ConfigError):
    pass


class BudgetOutOfRange(ConfigError):
    pass


class ResolutionTooLow(ConfigError):
    pass


class NonDivisibleFactor(ConfigError):
    pass


class AxisTooShort(ConfigError):
    pass


class ShapeMismatch(ConfigError):
    pass


class MissingLabels(ConfigError):
    pass


class SelectorLabelRequired(ConfigError):
    pass


class MixedDatasets(ConfigError):
    pass


class ZeroVector(ConfigError):
    pass


class ZeroReference(ConfigError):
    pass


class ZeroDenominator(ConfigError):
    pass


class UnknownAlgorithm(ConfigError):
    pass


class RecordFormatError(ConfigError):
    pass


class NumericalError(PicoreError, ArithmeticError):
    exit_code = 3


class CflViolation(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass
