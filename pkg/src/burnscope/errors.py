"""Exception hierarchy.

Each family maps onto one CLI exit code: configuration/parameter problems
exit 2, data problems exit 3, numeric failures exit 4.
"""


class BurnscopeError(Exception):
    exit_code = 1


class ConfigError(BurnscopeError, ValueError):
    exit_code = 2


class ParameterError(ConfigError):
    pass


class DataError(BurnscopeError, ValueError):
    exit_code = 3


class RangeError(DataError):
    pass


class ShapeError(DataError):
    pass


class CalibrationError(DataError):
    pass


class DataQualityError(DataError):
    pass


class StatisticsError(DataError):
    pass


class EmptyTissueError(DataError):
    pass


class SelectionError(DataError):
    pass


class GraphError(DataError):
    pass


class ProvenanceError(DataError):
    pass


class NumericError(BurnscopeError, ArithmeticError):
    exit_code = 4


class FitError(NumericError):
    pass


class DegenerateFitError(FitError):
    pass
