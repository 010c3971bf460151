"""Exception types shared across the package."""


class SpinCMError(Exception):
    """Base class for all package-specific errors."""


class SingularConfigurationError(SpinCMError):
    """Two pole positions are closer than the allowed separation."""


class ConstraintViolationError(SpinCMError):
    """Spin vectors violate the unit pairing b_i . a_i = 1."""


class RangeOverflowError(SpinCMError):
    """Exponentiated coordinates would overflow double precision."""


class PoleProximityError(SpinCMError):
    """Evaluation point too close to a moving pole."""


class ConditioningError(SpinCMError):
    """Spectral parameter too close to a resolvent singularity."""

    def __init__(self, message, margin=None, suggestion=None):
        super().__init__(message)
        self.margin = margin
        self.suggestion = suggestion


class NewtonConvergenceError(SpinCMError):
    """Implicit stepper failed to converge; carries the last residual norm."""

    def __init__(self, message, last_residual=None, iterations=None):
        super().__init__(message)
        self.last_residual = last_residual
        self.iterations = iterations


class RankDeficiencyError(SpinCMError):
    """Newton Jacobian is numerically singular."""


class StateFileError(SpinCMError):
    """State file failed validation; names the offending field."""

    def __init__(self, field, message):
        super().__init__(f"field '{field}': {message}")
        self.field = field
