"""Exception and warning types raised by ldexpand."""


class LdexpandError(Exception):
    """Base class for all library errors."""


class ConfigError(LdexpandError):
    """Invalid run configuration or expression."""


class UnsupportedOrder(LdexpandError):
    """A derivative of higher order than the inputs support was requested."""


class CumulantOverflow(LdexpandError, OverflowError):
    """exp(z*u) would leave the finite floating point range."""


class LegendreError(LdexpandError):
    """Base class for Legendre transform failures."""


class NonConvexDetected(LegendreError):
    """The derivative of the function being conjugated decreased."""


class Unbounded(LegendreError):
    """The primal point lies outside the closure of the gradient range."""


class NoConvergence(LegendreError):
    """Newton iteration exhausted its budget."""


class VariationalError(LdexpandError):
    """Base class for extremal-path solver failures."""


class AllStartsFailed(VariationalError):
    """Every multistart hit infinite action and could not escape."""


class BracketNotFound(VariationalError):
    """Shooting could not bracket the natural boundary condition."""


class NotApplicable(VariationalError):
    """Euler-Lagrange shooting requested for an unsupported problem."""


class OrderAnomalous(VariationalError):
    """Grid refinement shows an empirical order below one."""


class SimulationError(LdexpandError):
    """Base class for path simulation failures."""


class EnvelopeExceeded(SimulationError):
    """The thinning majorant had to be re-expanded too many times."""


class NegativeDiffusion(SimulationError):
    """A negative diffusion coefficient was detected."""


class EstimatorError(LdexpandError):
    """Base class for prefactor estimation failures."""


class DegenerateExponent(EstimatorError):
    """More than half of the tilted samples fell outside the localization tube."""


class FitIllConditioned(EstimatorError):
    """The epsilon-sweep design matrix is numerically singular."""


class GenericMeasureUnsupported(LdexpandError):
    """An operation needs diagonal or terminal derivative measures."""


class PideError(LdexpandError):
    """Base class for finite-difference solver failures."""


class StabilityViolation(PideError):
    """The explicit stability bound needs more steps than allowed."""


class BoundaryLeak(PideError):
    """The computational domain is too small for the requested horizon."""


class MissingArtifacts(LdexpandError):
    """A report was requested but prior outputs are missing."""


class NonUniqueSuspected(UserWarning):
    """Two multistarts reached the same value along distinct paths."""
