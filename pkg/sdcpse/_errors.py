"""Exception types raised by sdcpse.

Input problems derive from `ValueError`; failures of the numerics derive from `NumericalError`.
The command-line interface maps the first group to exit code 2 and the second to exit code 3.
"""

from __future__ import annotations


class IsolatedPointError(ValueError):
    """A point has no neighbors within the cutoff radius."""

    def __init__(self, message: str, *, index: int | None = None):
        super().__init__(message)
        self.index = index


class PointCloudFormatError(ValueError):
    """A point-cloud file could not be parsed."""

    def __init__(self, message: str, *, line: int | None = None):
        super().__init__(message)
        self.line = line


class MissingNormalsError(ValueError):
    """A point-cloud file has no normal columns and normal estimation was not requested."""


class UnsupportedGeometryError(ValueError):
    """The geometry falls outside what the boundary treatment supports."""


class NumericalError(RuntimeError):
    """Base class for failures of the numerical methods."""


class SingularMatrixError(NumericalError):
    """A dense system failed the pivot-ratio test."""

    def __init__(self, message: str, *, pivot_ratio: float | None = None):
        super().__init__(message)
        self.pivot_ratio = pivot_ratio


class DegenerateDistributionError(NumericalError):
    """The moment conditions cannot be met on a neighborhood."""

    def __init__(self, message: str, *, index: int | None = None):
        super().__init__(message)
        self.index = index


class ConvergenceError(NumericalError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, *, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class BlowUpError(NumericalError):
    """Time integration produced a non-finite value."""

    def __init__(self, message: str, *, step: int):
        super().__init__(message)
        self.step = step


class IllConditionedShapeError(NumericalError):
    """The shape tensor at a point has a genuinely complex eigenvalue pair."""

    def __init__(self, message: str, *, index: int | None = None):
        super().__init__(message)
        self.index = index
