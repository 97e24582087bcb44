"""
Exception hierarchy for the dictionary learning toolkit.
"""


class DictLearnError(Exception):
    """
    Base class for all toolkit errors.

    Args:
        message: Human readable description
        report: Optional partial result (report or trace) attached for diagnostics
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class ParameterError(DictLearnError, ValueError):
    """A model or algorithm parameter is outside its valid range."""


class ShapeError(DictLearnError, ValueError):
    """Array dimensions do not match."""


class RankError(DictLearnError):
    """A dictionary is singular or numerically rank deficient."""


class NormalizationError(DictLearnError):
    """A dictionary column cannot be normalized (zero column)."""


class UnsupportedModelError(DictLearnError):
    """The coefficient model has no closed form for the requested quantity."""


class CapacityError(DictLearnError):
    """An exact enumeration would be too large."""


class NumericError(DictLearnError):
    """A numerical routine (quadrature, root finding) did not converge."""


class ContractError(DictLearnError):
    """A call violated an operation precondition (e.g. w[k] != 1)."""


class SolverError(DictLearnError):
    """One or more subproblem solves did not converge."""
