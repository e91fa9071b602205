"""
Exception hierarchy shared by the geometry kernel, the solver and the CLI.

The CLI maps these onto exit codes; the Newton driver turns geometry and
subproblem failures into a failed SolveReport instead of letting them escape.
"""


class GenEqError(Exception):
    """Base class for every error raised by this package."""


# ── Geometry ─────────────────────────────────────────────────

class GeometryError(GenEqError):
    """A manifold operation could not be carried out."""


class ChartMismatchError(GeometryError):
    """Two objects live on different charts, or a tangent is based elsewhere."""


class DomainError(GeometryError):
    """Input outside the normal-ball / injectivity domain of an operation."""


class SingularGeometryError(GeometryError):
    """An SPD computation lost positive definiteness."""


class UnsupportedFrameError(GeometryError):
    """No global orthonormal frame is available for this chart."""


# ── Problems and subproblems ─────────────────────────────────

class InfeasibleMultiplierError(GenEqError):
    """F(p, mu) is empty because some complementarity multiplier is negative."""


class SingularStepError(GenEqError):
    """The linear Newton step is rank deficient beyond the regularization tolerance."""


class SubproblemInfeasibleError(GenEqError):
    """Every branch of a complementarity step subproblem is infeasible."""


class InsufficientDataError(GenEqError):
    """Not enough usable iterates to estimate a convergence rate."""


class ConfigError(GenEqError):
    """An experiment configuration is missing keys or holds invalid values."""


class ParameterError(GenEqError):
    """Radius or certificate constants outside their admissible range."""
