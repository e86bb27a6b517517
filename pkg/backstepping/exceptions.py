"""
Backstepping Exceptions

Exception hierarchy shared by every layer of the kernel design pipeline.
Each leaf names one failure condition; the four families group them by the
stage that raises them so callers can catch as broadly as they need.
"""

from typing import Optional


class BacksteppingException(Exception):
    """Base exception for all kernel design, simulation and config errors."""
    pass


# Plant and target validation

class ModelException(BacksteppingException):
    """Raised when a plant or target description violates its assumptions."""
    pass


class DiffusionNotPositive(ModelException):
    """A diffusion coefficient is not strictly positive on [0, 1]."""
    pass


class DiffusionCoefficientsTouch(ModelException):
    """Two diffusion coefficients come closer than the separation tolerance."""
    pass


class MalformedBC(ModelException):
    """Boundary operator matrices at z = 0 do not have the expected block shape."""
    pass


class ActuationRowZero(ModelException):
    """An input channel at z = 1 acts on nothing."""
    pass


class CoupledLeftBC(ModelException):
    """A boundary condition at z = 0 mixes several states."""
    pass


class TargetMismatch(ModelException):
    """Target boundary type at z = 1 is incompatible with the actuation type."""
    pass


# Grid functions and interpolation

class NumericsException(BacksteppingException):
    """Raised by grid function evaluation, quadrature and fitting."""
    pass


class OutOfRange(NumericsException):
    """Abscissa outside the tabulated interval."""
    pass


class OutsideDomain(NumericsException):
    """Query point outside the valid region of a 2-D grid function."""
    pass


class NotMonotone(NumericsException):
    """Tabulated function is not strictly increasing."""
    pass


class NonPositiveNorm(NumericsException):
    """A norm sample is zero or negative where a logarithm is needed."""
    pass


class GridMismatch(NumericsException):
    """Sampled data does not match the grid it is evaluated on."""
    pass


# Iterative solvers and time stepping

class SolverException(BacksteppingException):
    """Raised when an iterative or time-stepping solver fails."""
    pass


class NoConvergence(SolverException):
    """Successive approximation did not reach the tolerance."""

    def __init__(self, message: str, iterations: int = 0, last_update: float = float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.last_update = last_update


class EigSolveFailed(SolverException):
    """Neither inverse iteration nor the dense fallback produced an eigenvalue."""
    pass


class StepRejected(SolverException):
    """Implicit step matrix is singular or produced non-finite values."""
    pass


class GridTooCoarse(SolverException):
    """Simulator grid has too few nodes for the boundary stencils."""
    pass


class MissingKernelTrace(SolverException):
    """Kernel values needed at z = 1 are not available."""
    pass


# Configuration documents

class ConfigException(BacksteppingException):
    """Raised while reading and validating a configuration document."""
    pass


class ParseError(ConfigException):
    """Malformed document or expression, with the location of the problem."""

    def __init__(self, message: str, path: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[int] = None):
        location = ""
        if path:
            location = f"{path}"
        if line is not None:
            location = f"{location}:{line}" if location else f"line {line}"
            if column is not None:
                location = f"{location}:{column}"
        super().__init__(f"{location}: {message}" if location else message)
        self.path = path
        self.line = line
        self.column = column


class DimensionMismatch(ConfigException):
    """Matrix or vector sizes disagree with the declared state dimension."""
    pass


class ExpressionDomainError(ConfigException):
    """An expression evaluates to a non-finite value on the sample grid."""
    pass
