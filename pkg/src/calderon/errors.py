"""Exception hierarchy.

Every error raised by the package derives from :class:`CalderonError`.  The
``exit_code`` attribute is what the command line front end returns when the
error escapes a run.
"""


class CalderonError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class InvalidConfig(CalderonError, ValueError):
    """Configuration or precondition violated."""

    exit_code = 3


class TauZero(InvalidConfig):
    """A Carleman parameter of zero was supplied where sgn(tau) is needed."""


class MetricUnsupported(InvalidConfig):
    """Operation only implemented for the Euclidean preset."""


class StencilTooShort(InvalidConfig):
    """Lambda grid is too short for the requested derivative order."""


class AttenuationTooLarge(InvalidConfig):
    """Exponential Radon inversion outside the conditioning guard."""


class IndexMismatch(InvalidConfig):
    """Two operators do not share their boundary index sets."""


class TangentialExit(CalderonError):
    """Geodesic meets the boundary tangentially."""


class MaxStepsExceeded(InvalidConfig):
    """Geodesic did not leave the disk within the step budget."""


class ChartFailure(CalderonError):
    """Polar chart is not injective or shooting did not converge."""


class SupportViolation(CalderonError):
    """A trace or boundary datum leaks outside its admissible set."""


class BumpOutsideE(SupportViolation):
    """Angular bump reaches the inaccessible part of the boundary."""


class NumericalFailure(CalderonError):
    """Base for failures that a larger tau or a finer grid may cure."""

    exit_code = 4


class DirichletEigenvalue(NumericalFailure):
    """The Dirichlet problem is singular at this discretization."""


class RankDeficient(NumericalFailure):
    """Constraint system lost rank beyond the truncation tolerance."""


class NotContracting(NumericalFailure):
    """Neumann series for the Schrodinger remainder does not contract."""


class NearSingular(NumericalFailure):
    """Boundary integral operator is too ill conditioned; raise tau."""


class ExtrapolationUnstable(NumericalFailure):
    """Successive Richardson estimates disagree beyond tolerance."""
