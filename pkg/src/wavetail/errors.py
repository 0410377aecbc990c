"""Exception types shared across wavetail modules."""


class WavetailError(Exception):
    """Base class for all wavetail errors."""


class InvalidProfileError(WavetailError):
    """Profile evaluated to non-finite values on the test grid."""


class OrderViolationError(WavetailError):
    """A coefficient failed its declared symbol-order bound."""


class DegenerateMetricError(WavetailError):
    """Metric failed positivity / non-degeneracy checks on the grid."""


class UnsupportedHalfPlaneError(WavetailError):
    """Spectral parameter requested in the lower half plane."""


class ResonanceSuspectedError(WavetailError):
    """Wronskian of the matched solutions is numerically zero."""


class ResolutionError(WavetailError):
    """Grid too coarse for the requested oscillation or derivative."""


class DivergentIntegralError(WavetailError):
    """Kernel integral does not converge for the supplied data."""


class ExpansionExhaustedError(WavetailError):
    """Iterate decays too slowly for a further zero-energy solve."""


class FitDegenerateError(WavetailError):
    """Design matrix of a fit is numerically rank deficient."""


class StepSizeError(WavetailError):
    """Finite-difference noise exceeds the differentiated signal."""


class ContourInvalidError(WavetailError):
    """Transform integrand fails to decay at a contour end."""


class PoleOnContourError(WavetailError):
    """Contour passes through (or too close to) a symbol pole."""


class ExcludedWeightError(WavetailError):
    """Weight parameter sits on an excluded (integer-shifted) value."""


class AmplitudeTooLargeError(WavetailError):
    """Perturbative iteration failed to contract."""


class RegularityError(WavetailError):
    """Data lacks the derivatives required by the operation."""


class StabilityError(WavetailError):
    """Time step violates the CFL bound."""


class InstabilityError(WavetailError):
    """Discrete energy grew beyond the allowed factor."""


class QuadratureError(WavetailError):
    """Oscillatory quadrature failed to converge under refinement."""


class DomainTooSmallError(WavetailError):
    """Truncated-domain tail contributes too much to a norm."""


class NoiseFloorError(WavetailError):
    """Trace fell below the double-precision noise floor."""


class RuleInapplicableError(WavetailError):
    """Rewrite rule pattern or guard failed on the given expression."""

    def __init__(self, message, failed_guard=None):
        super().__init__(message)
        self.failed_guard = failed_guard


class SchemaError(WavetailError):
    """Experiment configuration violates the documented schema."""
