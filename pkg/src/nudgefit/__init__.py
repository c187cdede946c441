"""Parameter recovery for nudged dynamical systems.

Submodules: :mod:`~nudgefit.core` (models, observation and nudging),
:mod:`~nudgefit.integrate` (time stepping, observation history),
:mod:`~nudgefit.estimators` (RNI, RNI+, RLS updates),
:mod:`~nudgefit.l96` (two-layer Lorenz 96), :mod:`~nudgefit.rbc`
(free-slip Rayleigh-Benard convection) and :mod:`~nudgefit.harness`
(configs, runs, CLI).
"""
from .errors import (
    CFLViolation,
    ConfigurationError,
    DegenerateUpdate,
    IntegrationBlowup,
    NotReady,
    NudgeFitError,
    PermanentDegeneracy,
    StiffnessError,
)
from .core import (
    LinearOperator,
    NudgeConfig,
    ObservationOperator,
    SystemModel,
    observe,
    rhs_nudged,
    rhs_reference,
    state_error,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "CFLViolation",
    "ConfigurationError",
    "DegenerateUpdate",
    "IntegrationBlowup",
    "NotReady",
    "NudgeFitError",
    "PermanentDegeneracy",
    "StiffnessError",
    "LinearOperator",
    "NudgeConfig",
    "ObservationOperator",
    "SystemModel",
    "observe",
    "rhs_nudged",
    "rhs_reference",
    "state_error",
]
