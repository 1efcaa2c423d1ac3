"""Exception and warning types raised by the package."""


class NcfvError(Exception):
    """Base class for all errors raised by the package."""


class ValidationError(NcfvError, ValueError):
    """Invalid user input (bad configuration, bad parameter)."""


class NumericalError(NcfvError, ArithmeticError):
    """A computation produced an unusable result."""


class RangeTooLarge(ValidationError):
    """Hopping range exceeds half of the torus size."""


class FluxNotQuantized(ValidationError):
    """Flux fraction is not commensurate with the torus."""


class DimensionParity(ValidationError):
    """Symmetry class and spatial dimension have incompatible parity."""


class UnsupportedRank(ValidationError):
    """Requested Clifford algebra rank is not supported."""


class NonpositiveTemperature(ValidationError):
    """Temperature must be strictly positive."""


class NonpositiveWidth(ValidationError):
    """Kernel width or broadening must be strictly positive."""


class NotClean(ValidationError):
    """Operation requires a disorder-free model."""


class NotHermitian(NumericalError):
    """Operator is not Hermitian within tolerance."""


class NotAProjection(NumericalError):
    """Operator is not idempotent within tolerance."""


class NotUnitary(NumericalError):
    """Operator is not unitary within tolerance."""


class ConvergenceFailure(NumericalError):
    """Eigensolver or iterative refinement failed to converge."""


class ChiralityViolation(NumericalError):
    """Projection is incompatible with the declared chiral grading."""


class GapClosed(NumericalError):
    """The Fermi level is not inside a spectral gap."""


class Divergence(NumericalError):
    """Closed-form expression diverges at the requested parameters."""


class SingularTensor(NumericalError):
    """Conductivity tensor cannot be inverted."""


class NoCrossing(NumericalError):
    """Two curves do not intersect in their common range."""


class AllPairsFail(NumericalError):
    """No pair of curves produced an intersection."""


class DegenerateOverlap(NumericalError):
    """Rescaled curves overlap on too small a range."""


class MissingManifest(ValidationError):
    """Result directory has no run manifest."""


class FermiLevelWarning(UserWarning):
    """Fermi level coincides with an eigenvalue."""


class ZeroModeWarning(UserWarning):
    """Hamiltonian has an eigenvalue numerically at zero."""


class NoCrossingWarning(UserWarning):
    """A pair of curves was excluded from the crossing estimate."""


class CriticalPointWarning(UserWarning):
    """Model parameters sit on a clean gap closing."""
