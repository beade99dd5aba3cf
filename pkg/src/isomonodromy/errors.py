"""Exception hierarchy for the isomonodromy library."""


class IsomonodromyError(Exception):
    """Base class for every failure raised by the library."""


class ConnectionSpecError(IsomonodromyError, ValueError):
    """Malformed connection data: shapes, ranks or normalization."""


class NormalizationError(IsomonodromyError):
    """Operation received a connection with the wrong residue-sum normalization."""


class PoleProximityError(IsomonodromyError):
    """A point or a path segment comes closer to a pole than the evaluation guard."""


class PoleCollisionError(IsomonodromyError):
    """Two poles come closer than the separation tolerance."""


class LoopConstructionError(IsomonodromyError):
    """No loop isolating the requested pole could be built."""


class IntegrationError(IsomonodromyError):
    """The adaptive integrator failed (step-size underflow or solver error)."""


class ResonanceError(IsomonodromyError):
    """The eigenvalue gap of a rank-1 leading matrix collapsed below tolerance."""


class SingularMatrixError(IsomonodromyError, ValueError):
    """A matrix that must be invertible is not."""


class DegenerateChartError(IsomonodromyError):
    """The trivial system has R21 = 0, so no auxiliary chart of this form exists."""


class ThetaDivisorError(IsomonodromyError):
    """u1 vanishes where the gauge map to the trivial normalization is required."""


class InconclusiveScanError(IsomonodromyError):
    """The argument-principle count cannot be trusted on the scanned boundary."""


class NonConvergenceError(IsomonodromyError):
    """Newton refinement did not converge."""


class SamplingError(IsomonodromyError):
    """Pole-order sampling could not reach a requested level of |u1|."""


class FixtureExhaustedError(IsomonodromyError):
    """Fixture generation ran out of resampling attempts."""


class GaugeConsistencyError(IsomonodromyError):
    """A gauge transformation missed its normalization or apparentness targets."""
