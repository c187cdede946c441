"""One-dimensional test problem ``u' = -lambda u + 1``.

With gain ``mu`` and proxy ``lambda~`` the coupled steady states are
``u = 1/lambda`` and ``u~ = (1 + mu u) / (lambda~ + mu)``, which makes every
update available in closed form.
"""
from __future__ import annotations

import numpy as np

from .assimilation import Twin
from .core import NudgeConfig, ObservationOperator, SystemModel, matrix_operator

__all__ = ["scalar_model", "steady_states", "scalar_twin"]


def scalar_model() -> SystemModel:
    return SystemModel(dim=1, linear_ops=(matrix_operator([[-1.0]], name="lambda"),),
                       nonlinearity=lambda u: np.ones_like(u, dtype=float), name="scalar-toy",
                       slot_names=("lambda",))


def steady_states(lam_true: float, lam_proxy: float, mu: float) -> tuple[float, float]:
    u = 1.0 / lam_true
    return u, (1.0 + mu * u) / (lam_proxy + mu)


def scalar_twin(lam_true: float = 2.0, lam_proxy: float = 1.0, mu: float = 10.0, at_steady_state: bool = True,
                exact: bool = False) -> Twin:
    """Twin started at the coupled steady state (or at ``u~ = u`` when ``exact``)."""
    model = scalar_model()
    obs = ObservationOperator.full(1)
    u, ut = steady_states(lam_true, lam_proxy, mu)
    if not at_steady_state:
        u, ut = 1.0, 0.0
    if exact:
        ut = u
    return Twin(model, np.array([lam_true]), obs, NudgeConfig.uniform(mu, obs), np.array([u]), np.array([ut]))
