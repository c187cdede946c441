"""Exception hierarchy shared by the solvers, estimators and the CLI."""


class NudgeFitError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(NudgeFitError, ValueError):
    """Inconsistent dimensions, invalid gains, unresolvable parameter slots."""

    exit_code = 2


class IntegrationBlowup(NudgeFitError, FloatingPointError):
    """Non-finite values appeared during time stepping."""

    exit_code = 3

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t:.17g})")
        self.t = t


class StiffnessError(IntegrationBlowup):
    """Adaptive step size underflowed."""


class CFLViolation(IntegrationBlowup):
    """Explicit advection step exceeds the CFL limit."""

    def __init__(self, message, t=None, advisory_dt=None):
        super().__init__(message, t)
        self.advisory_dt = advisory_dt


class DegenerateUpdate(NudgeFitError):
    """The parameter update is not solvable at this time; caller defers."""

    def __init__(self, message, reason="degenerate"):
        super().__init__(message)
        self.reason = reason


class NotReady(NudgeFitError):
    """Not enough observation history for the requested derivative stencil."""


class PermanentDegeneracy(NudgeFitError):
    """Too many consecutive deferred updates."""

    exit_code = 4

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}
