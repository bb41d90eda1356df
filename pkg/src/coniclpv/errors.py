"""Exception hierarchy shared by all modules."""


class ConicLpvError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ConicLpvError, ValueError):
    pass


class InputError(ConicLpvError, ValueError):
    pass


class DomainError(ConicLpvError, ValueError):
    """Parameter value outside the system's parameter box."""


class DivergenceError(ConicLpvError, RuntimeError):
    """State norm crossed the blow-up threshold during integration."""

    def __init__(self, time, norm=float("inf")):
        super().__init__(f"state diverged at t={time:.6g} (|x|_inf={norm:.3g})")
        self.time = time
        self.norm = norm


class NotConicError(ConicLpvError):
    pass


class RegionMisclassifiedError(ConicLpvError):
    """An index LMI contradicts the region label it was asked for."""


class NoFiniteIndexError(ConicLpvError):
    """No finite relaxation makes the nonconic index LMI feasible."""


class CoverageError(ConicLpvError):
    """A trajectory visits parameter values the certificate does not cover."""


class SingularConeError(ConicLpvError, ValueError):
    pass


class PreconditionError(ConicLpvError):
    pass


class EstimateUndefinedError(ConicLpvError):
    pass


class WellPosednessError(ConicLpvError):
    pass


class InconsistentTraceError(ConicLpvError):
    pass


class SectorMismatchError(ConicLpvError):
    pass


class DesignInfeasibleError(ConicLpvError):
    def __init__(self, message, best_residual=float("-inf")):
        super().__init__(message)
        self.best_residual = best_residual


class ConfigError(ConicLpvError, ValueError):
    pass
