"""Parameter-linear dynamical systems and their nudged companions.

A reference system is written as

    du/dt = sum_k lambda_k L_k u + F(u)

with linear operators ``L_k`` and a nonlinearity ``F`` that also carries any
constant forcing.  The nudged system uses proxy parameters and relaxes the
observed part of its state toward the observed truth.  Observed data always
live in full-length vectors with zeros off the observation range.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "LinearOperator",
    "SystemModel",
    "ObservationOperator",
    "NudgeConfig",
    "StateError",
    "as_state",
    "as_parameters",
    "matrix_operator",
    "elementary_operator",
    "check_linearity",
    "rhs_reference",
    "rhs_nudged",
    "observe",
    "state_error",
]


def as_state(values, dim: int | None = None) -> np.ndarray:
    """Validate and copy a state vector (finite, 1-D, optional length)."""
    u = np.array(values, dtype=float, copy=True)
    if u.ndim != 1 or u.size < 1:
        raise ConfigurationError(f"state must be a non-empty 1-D vector, got shape {u.shape}")
    if dim is not None and u.size != dim:
        raise ConfigurationError(f"state length {u.size} != model dimension {dim}")
    if not np.all(np.isfinite(u)):
        raise ConfigurationError("state contains non-finite entries")
    return u


def as_parameters(values, count: int | None = None) -> np.ndarray:
    lam = np.atleast_1d(np.array(values, dtype=float, copy=True))
    if lam.ndim != 1:
        raise ConfigurationError(f"parameter vector must be 1-D, got shape {lam.shape}")
    if count is not None and lam.size != count:
        raise ConfigurationError(f"expected {count} parameters, got {lam.size}")
    if not np.all(np.isfinite(lam)):
        raise ConfigurationError("parameter vector contains non-finite entries")
    return lam


@dataclass(frozen=True)
class LinearOperator:
    """A linear map R^d -> R^d given by a callback, optionally with its matrix.

    ``support`` marks the rows the operator can write to.  The relaxation
    Newton update restricts each parameter's error energy to this support.
    """

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]
    matrix: np.ndarray | None = None
    support: np.ndarray | None = None
    name: str = ""

    def __call__(self, u):
        return self.apply(u)

    def support_mask(self) -> np.ndarray:
        if self.support is not None:
            return np.asarray(self.support, dtype=bool)
        if self.matrix is not None:
            return np.any(np.asarray(self.matrix) != 0.0, axis=1)
        return np.ones(self.dim, dtype=bool)


def matrix_operator(matrix, name: str = "") -> LinearOperator:
    A = np.array(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigurationError(f"operator matrix must be square, got {A.shape}")
    A.setflags(write=False)
    return LinearOperator(dim=A.shape[0], apply=lambda u, A=A: A @ u, matrix=A, name=name)


def elementary_operator(dim: int, index: int, value: float = -1.0, name: str = "") -> LinearOperator:
    """Single nonzero diagonal entry ``value`` at ``index``.

    No dense matrix is stored; d can be large.
    """
    if not 0 <= index < dim:
        raise ConfigurationError(f"index {index} outside [0, {dim})")
    support = np.zeros(dim, dtype=bool)
    support[index] = True
    support.setflags(write=False)

    def apply(u, index=index, value=value):
        out = np.zeros_like(u, dtype=float)
        out[index] = value * u[index]
        return out

    return LinearOperator(dim=dim, apply=apply, support=support, name=name or f"e{index}")


def check_linearity(op: LinearOperator, rng=None, trials: int = 5) -> float:
    """Largest relative defect of ``op(a u + b v) - a op(u) - b op(v)`` on random probes."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(trials):
        u, v = rng.standard_normal(op.dim), rng.standard_normal(op.dim)
        a, b = rng.standard_normal(2)
        defect = op(a * u + b * v) - a * op(u) - b * op(v)
        scale = np.linalg.norm(u) + np.linalg.norm(v)
        worst = max(worst, float(np.linalg.norm(defect) / scale))
    return worst


@dataclass(frozen=True)
class SystemModel:
    """du/dt = sum_k lambda_k L_k u + F(u).

    ``kernel`` is an optional opaque hook used by compiled fast paths (see
    :mod:`nudgefit.integrate`); the generic callbacks stay authoritative.
    """

    dim: int
    linear_ops: tuple[LinearOperator, ...]
    nonlinearity: Callable[[np.ndarray], np.ndarray]
    name: str = ""
    slot_names: tuple[str, ...] = ()
    kernel: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("model dimension must be >= 1")
        ops = tuple(self.linear_ops)
        object.__setattr__(self, "linear_ops", ops)
        if not 1 <= len(ops) <= self.dim:
            raise ConfigurationError(f"need 1 <= p <= d, got p={len(ops)}, d={self.dim}")
        for op in ops:
            if op.dim != self.dim:
                raise ConfigurationError(f"operator {op.name!r} has dim {op.dim}, model has {self.dim}")
        if self.slot_names and len(self.slot_names) != len(ops):
            raise ConfigurationError("slot_names must match the number of operators")

    @property
    def n_params(self) -> int:
        return len(self.linear_ops)

    def apply_linear(self, lam, u) -> np.ndarray:
        out = np.zeros(self.dim)
        for lk, op in zip(lam, self.linear_ops):
            out += lk * op(u)
        return out

    def linear_columns(self, u) -> np.ndarray:
        """Matrix whose k-th column is L_k u."""
        return np.column_stack([op(u) for op in self.linear_ops])


@dataclass(frozen=True)
class ObservationOperator:
    """Orthogonal coordinate projection I_h.

    ``kind`` is ``"component-mask"`` for physical components or
    ``"spectral-truncation"`` when the coordinates are spectral coefficients
    and the mask keeps the low modes.
    """

    mask: np.ndarray
    kind: str = "component-mask"

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool)
        if m.ndim != 1:
            raise ConfigurationError("observation mask must be 1-D")
        if self.kind not in ("component-mask", "spectral-truncation"):
            raise ConfigurationError(f"unknown observation kind {self.kind!r}")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @classmethod
    def full(cls, dim: int) -> "ObservationOperator":
        return cls(np.ones(dim, dtype=bool))

    @classmethod
    def from_indices(cls, dim: int, indices: Sequence[int]) -> "ObservationOperator":
        m = np.zeros(dim, dtype=bool)
        m[list(indices)] = True
        return cls(m)

    @classmethod
    def spectral(cls, wavenumbers, cutoff: float) -> "ObservationOperator":
        """Keep coordinates whose |wavenumber| is at most ``cutoff``."""
        k = np.abs(np.asarray(wavenumbers, dtype=float))
        return cls(k <= cutoff, kind="spectral-truncation")

    @property
    def dim(self) -> int:
        return self.mask.size

    @property
    def rank(self) -> int:
        return int(self.mask.sum())

    def __call__(self, u):
        return observe(self, u)


def observe(obs: ObservationOperator, u) -> np.ndarray:
    """Project ``u``; unobserved entries are set to zero."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != obs.dim:
        raise ConfigurationError(f"state length {u.shape[-1]} != observation dim {obs.dim}")
    return np.where(obs.mask, u, 0.0)


@dataclass(frozen=True)
class NudgeConfig:
    """Diagonal relaxation gains, acting only through the observation operator."""

    gains: np.ndarray
    obs: ObservationOperator

    def __post_init__(self):
        g = np.array(self.gains, dtype=float)
        if g.ndim == 0:
            g = np.full(self.obs.dim, float(g))
        if g.shape != (self.obs.dim,):
            raise ConfigurationError(f"gain vector shape {g.shape} != ({self.obs.dim},)")
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise ConfigurationError("nudging gains must be finite and nonnegative")
        g = np.where(self.obs.mask, g, 0.0)
        g.setflags(write=False)
        object.__setattr__(self, "gains", g)

    @classmethod
    def uniform(cls, mu: float, obs: ObservationOperator) -> "NudgeConfig":
        return cls(np.full(obs.dim, float(mu)), obs)

    @property
    def mu_min(self) -> float:
        observed = self.gains[self.obs.mask]
        return float(observed.min()) if observed.size else 0.0

    @property
    def enabled(self) -> bool:
        return bool(np.any(self.gains > 0))


@dataclass(frozen=True)
class StateError:
    w: np.ndarray
    observed_part: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.w))

    @property
    def observed_norm(self) -> float:
        return float(np.linalg.norm(self.observed_part))


def _check_lambda(model: SystemModel, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (model.n_params,):
        raise ConfigurationError(f"expected {model.n_params} parameters, got shape {lam.shape}")
    return lam


def rhs_reference(model: SystemModel, lam, u) -> np.ndarray:
    """sum_k lambda_k L_k u + F(u)."""
    lam = _check_lambda(model, lam)
    u = np.asarray(u, dtype=float)
    if u.shape != (model.dim,):
        raise ConfigurationError(f"state shape {u.shape} != ({model.dim},)")
    return model.apply_linear(lam, u) + model.nonlinearity(u)


def rhs_nudged(model: SystemModel, proxy, nudged, observed_truth, nudge: NudgeConfig,
               obs: ObservationOperator) -> np.ndarray:
    """Reference tendency at proxy parameters plus ``-M I_h (u~ - u)``."""
    observed_truth = np.asarray(observed_truth, dtype=float)
    if observed_truth.shape != (model.dim,) or obs.dim != model.dim:
        raise ConfigurationError("observed truth / observation operator do not match the model dimension")
    base = rhs_reference(model, proxy, nudged)
    return base - nudge.gains * (observe(obs, nudged) - observed_truth)


def state_error(nudged, truth, obs: ObservationOperator) -> StateError:
    nudged = np.asarray(nudged, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if nudged.shape != truth.shape:
        raise ConfigurationError(f"shape mismatch {nudged.shape} vs {truth.shape}")
    w = nudged - truth
    return StateError(w=w, observed_part=observe(obs, w))
