"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
2 configuration, 3 I/O, 4 solver, 5 invalid model or geometry.
"""


class GRFError(Exception):
    """Base class for all package errors."""

    exit_code = 5
    category = "model-invalid"


# configuration / I/O -------------------------------------------------------


class ConfigError(GRFError):
    exit_code = 2
    category = "config"


class IoError(GRFError):
    exit_code = 3
    category = "io"


class ParseError(IoError):
    """Malformed mesh, field or observation file."""


# geometry ------------------------------------------------------------------


class DegenerateSimplex(GRFError):
    """A simplex has zero (or non-finite) volume."""


class IndexOutOfRange(GRFError):
    """A simplex references a vertex index outside ``[0, n)``."""


class OutsideDomain(GRFError):
    """A query point could not be located in the mesh."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class MissingField(GRFError):
    """Anisotropy data is missing or incompatible with the mesh."""


class GridTooLarge(GRFError, OverflowError):
    """Requested grid exceeds the configured vertex cap."""


# finite elements -----------------------------------------------------------


class NonPositiveMass(GRFError):
    pass


class NonFiniteEntry(GRFError):
    pass


# spectral machinery --------------------------------------------------------


class NonFiniteTarget(GRFError):
    """The function handed to a Chebyshev fit is not finite on the interval."""


class IntervalTooSmall(GRFError):
    """A Chebyshev approximation interval does not cover the spectrum."""


class DimensionMismatch(GRFError, ValueError):
    pass


class NonPositiveLowerBound(GRFError):
    """The polynomial is not strictly positive on the spectral interval."""


class TooLarge(GRFError):
    """Dense oracle refused an instance above its size cap."""


# solvers / estimation --------------------------------------------------------


class SolverError(GRFError):
    exit_code = 4
    category = "solver"


class BreakdownError(SolverError):
    """Non-positive curvature met in conjugate gradient."""


class AllRestartsFailed(SolverError):
    pass


class RankDeficient(GRFError):
    pass
