"""Exception types shared across the package.

Every error raised by the library derives from :class:`TiltcrossError`, so
callers (in particular the CLI) can distinguish domain failures from
programming errors.
"""


class TiltcrossError(Exception):
    """Base class for all library errors."""


# --- potential ---------------------------------------------------------


class NoInteriorMinimum(TiltcrossError):
    """The gap minimum lies on the boundary of the search window."""


class ZeroNotFound(TiltcrossError):
    """Newton iteration for the complex zero of rho^2 did not converge."""


class ZeroOutsideStrip(TiltcrossError):
    """The complex zero lies outside the declared analyticity strip."""


class QuadratureNotConverged(TiltcrossError):
    """Adaptive Gauss-Legendre quadrature failed to reach tolerance."""


class BranchAmbiguity(TiltcrossError):
    """Square-root branch tracking could not decide a sign flip."""


# --- packets -----------------------------------------------------------


class GridNotPowerOfTwo(TiltcrossError):
    """Grid sizes must be powers of two for the fast transform."""


class ZeroNorm(TiltcrossError):
    """Cannot normalize an identically vanishing state."""


# --- splitstep ---------------------------------------------------------


class GridMismatch(TiltcrossError):
    """State grid does not match the propagator (or partner) grid."""


class ShiftOffGrid(TiltcrossError):
    """Momentum shift exceeds one period of the discrete momentum grid."""


class CrossingNotReached(TiltcrossError):
    """Mean position never reached the crossing within t_max."""


class EdgeMassExceeded(TiltcrossError):
    """Wavefunction mass near the grid boundary exceeds the monitor bound."""


# --- formula -----------------------------------------------------------


class NoSolution(TiltcrossError):
    """The optimal-order equations have no root in the search bracket."""


class CutoffRegion(TiltcrossError):
    """Requested momentum lies inside the energy-forbidden cutoff k^2 <= 4*delta."""


class ConstraintViolated(TiltcrossError):
    """Gaussian-integrability constraint fails.

    Carries the signed margin (positive = satisfied) in ``margin``.
    """

    def __init__(self, message, margin=None):
        super().__init__(message)
        self.margin = margin


# --- recursions --------------------------------------------------------


class SmoothnessLost(TiltcrossError):
    """Spectral decay check failed; further differentiation is unreliable."""


# --- decompose ---------------------------------------------------------


class ResidualAboveTolerance(UserWarning):
    """Best-effort fit returned with residual above the requested tolerance."""


class DegenerateTerm(UserWarning):
    """Two fitted Gaussian terms collapsed onto each other and were merged."""
