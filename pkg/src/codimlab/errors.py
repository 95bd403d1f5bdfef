"""Exception hierarchy shared by all modules."""


class CodimlabError(Exception):
    """Base class for every error raised by codimlab."""


class GeometryError(CodimlabError, ValueError):
    """Invalid boundary-set construction (dimensions, weights, slopes)."""


class ScaleRangeError(CodimlabError, ValueError):
    """Requested radii fall below the trust floor of the point cloud."""


class BudgetError(CodimlabError, RuntimeError):
    """A point, node or cube budget was exceeded.

    ``partial`` carries whatever was built before the budget ran out.
    """

    def __init__(self, message, partial=None, region=None):
        super().__init__(message)
        self.partial = partial
        self.region = region


class NearFieldError(CodimlabError, ValueError):
    """Query point too close to the boundary for the available quadrature."""


class DomainError(CodimlabError, ValueError):
    """Input outside the mathematical domain of the operation."""


class InsufficientDataError(CodimlabError, ValueError):
    """Not enough boundary atoms in a ball to fit a flat measure."""


class LPError(CodimlabError, RuntimeError):
    """Linear program did not reach optimality."""


class TopologyError(CodimlabError, RuntimeError):
    """Interior grid region without any Dirichlet or Robin contact."""


class ConvergenceError(CodimlabError, RuntimeError):
    """Iterative solver hit its iteration cap before the tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(CodimlabError, ValueError):
    """Invalid run configuration."""
