"""Exception types raised across the package."""


class VpsimError(Exception):
    """Base class for every error raised by vpsim."""


class GeometryError(VpsimError):
    """Leg or VP geometry is degenerate."""


class PhaseError(VpsimError):
    """A stance-only quantity was requested outside stance."""


class IntegrationError(VpsimError):
    """The ODE solver failed or no event was found within the horizon."""


class SimulationFailure(VpsimError):
    """The gait failed. ``kind`` names the failure mode."""

    def __init__(self, kind, message, step=None):
        super().__init__(message)
        self.kind = kind
        self.step = step


class ConvergenceError(VpsimError):
    """Fixed-point search did not converge."""

    def __init__(self, message, best_residual=float("nan")):
        super().__init__(message)
        self.best_residual = best_residual


class EstimationError(VpsimError):
    """A statistical estimate is undefined for the given data."""


class ConfigError(VpsimError):
    """Invalid run configuration. ``field`` is the offending dotted key."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
