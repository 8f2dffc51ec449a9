"""Exception hierarchy.

Two families matter to callers (and to the CLI exit codes): ``DataError`` for
problems with the observed data, ``ConfigError`` for bad arguments or
incompatible method/data combinations.
"""

from __future__ import annotations


class FewTreatError(Exception):
    """Base class for every error raised by this package."""


class DataError(FewTreatError, ValueError):
    pass


class ConfigError(FewTreatError, ValueError):
    pass


# dataset validation
class NoTreated(DataError):
    pass


class NoControls(DataError):
    pass


class NonBinaryTreatment(DataError):
    pass


class NonFiniteOutcome(DataError):
    pass


class PartialCovariates(DataError):
    pass


class NonPositiveCovariate(DataError):
    pass


# csv ingestion
class MissingHeader(DataError):
    pass


class MissingColumn(DataError):
    def __init__(self, column: str):
        super().__init__(f"missing column {column!r}")
        self.column = column


class ParseError(DataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# estimation
class LengthMismatch(DataError):
    pass


class TooFewResiduals(DataError):
    pass


class NonPositiveVariance(DataError):
    pass


# arguments
class BudgetZero(ConfigError):
    pass


class UOutOfRange(ConfigError):
    pass


class QuantileOrderViolation(ConfigError):
    pass


class EmptyGrid(ConfigError):
    pass


class NonConvergentRefinement(FewTreatError):
    pass


class MethodIncompatible(ConfigError):
    pass


class UnknownKind(ConfigError):
    pass
