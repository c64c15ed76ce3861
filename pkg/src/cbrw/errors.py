"""Exception hierarchy.

The three top-level classes map onto CLI exit codes: configuration
problems exit 2, numerical failures exit 3 and failed statistical
acceptance exits 4.
"""


class CbrwError(Exception):
    exit_code = 1


class ConfigError(CbrwError, ValueError):
    exit_code = 2

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [message])


class NormalizationError(ConfigError):
    pass


class RangeError(ConfigError):
    pass


class DuplicateCatalyst(ConfigError):
    pass


class DomainError(ConfigError):
    pass


class NotSupercritical(ConfigError):
    pass


class NumericError(CbrwError, ArithmeticError):
    exit_code = 3


class PrecisionError(NumericError):
    pass


class ConvergenceError(NumericError):
    pass


class BracketError(NumericError):
    pass


class DegenerateError(NumericError):
    pass


class FitError(NumericError):
    pass


class NoConvergence(NumericError):
    pass


NonConvergence = NoConvergence


class AnchorViolation(NumericError):
    pass


class PlateauNotReached(NumericError):
    pass


class MissingEstimate(NumericError):
    pass


class GridMismatch(NumericError):
    pass


class HorizonBiasError(NumericError):
    pass


class StatisticalError(CbrwError):
    exit_code = 4


class TooFewSamples(StatisticalError):
    pass


class TooFewExceedances(StatisticalError):
    pass
