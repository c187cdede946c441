"""Two-layer Lorenz 96 model with damping coefficients as unknown parameters.

State layout is ``(u_0..u_{K-1}, v_{0,1..J}, ..., v_{K-1,1..J})`` with
periodic slow index.  Parameter slots are named ``"slow:k"`` (damping d_k)
and ``"fast:k:j"`` (damping d_{k,j}, ``j`` counted from 1).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from . import kernels
from .core import ObservationOperator, SystemModel, elementary_operator
from .errors import ConfigurationError

__all__ = [
    "L96Params",
    "L96Bounds",
    "L96ObservationSpec",
    "L96Kernel",
    "EnergyBalance",
    "EtaBounds",
    "default_params",
    "parse_slots",
    "build_model",
    "observation_operator",
    "bounds",
    "energy_residual",
    "observed_fraction",
    "bound_eta",
    "random_init",
    "split_state",
]

DEFAULT_FAST_DAMPING = (0.2, 0.5, 1.0, 2.0, 5.0)


@dataclass(frozen=True)
class L96Params:
    K: int
    J: int
    F: float
    d_slow: np.ndarray
    d_fast: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        d_slow = np.ascontiguousarray(self.d_slow, dtype=float)
        d_fast = np.ascontiguousarray(self.d_fast, dtype=float)
        gamma = np.ascontiguousarray(self.gamma, dtype=float)
        if self.K < 3 or self.J < 1:
            raise ConfigurationError("need K >= 3 slow and J >= 1 fast variables")
        if d_slow.shape != (self.K,) or d_fast.shape != (self.K, self.J) or gamma.shape != (self.K, self.J):
            raise ConfigurationError("damping/coupling arrays do not match (K, J)")
        for a in (d_slow, d_fast, gamma):
            a.setflags(write=False)
        object.__setattr__(self, "d_slow", d_slow)
        object.__setattr__(self, "d_fast", d_fast)
        object.__setattr__(self, "gamma", gamma)

    @property
    def dim(self) -> int:
        return self.K * (self.J + 1)

    def fast_index(self, k: int, j: int) -> int:
        """Flat state index of v_{k,j} (j from 1)."""
        return self.K + k * self.J + (j - 1)


def default_params(K: int = 40, J: int = 5, F: float = 5.0, phase_divisor: float | None = None) -> L96Params:
    """Default constants: d_k = 1 + 0.7 cos(2 pi (k+1)/J), d_{k,j} = (0.2, 0.5, 1, 2, 5),
    gamma_j = 0.1 + 0.25 cos(2 pi j / J).

    ``phase_divisor`` replaces J in the cosine phases.
    """
    div = float(J if phase_divisor is None else phase_divisor)
    k = np.arange(K)
    d_slow = 1.0 + 0.7 * np.cos(2.0 * np.pi * (k + 1) / div)
    if J == len(DEFAULT_FAST_DAMPING):
        fast = np.array(DEFAULT_FAST_DAMPING)
    else:
        fast = np.geomspace(DEFAULT_FAST_DAMPING[0], DEFAULT_FAST_DAMPING[-1], J)
    j = np.arange(1, J + 1)
    gamma_j = 0.1 + 0.25 * np.cos(2.0 * np.pi * j / div)
    return L96Params(K=K, J=J, F=F, d_slow=d_slow, d_fast=np.tile(fast, (K, 1)), gamma=np.tile(gamma_j, (K, 1)))


@dataclass(frozen=True)
class L96ObservationSpec:
    """All slow variables are observed, plus the fast pairs in ``observed_fast``."""

    observed_fast: frozenset = field(default_factory=frozenset)

    def validate(self, params: L96Params) -> None:
        for k, j in self.observed_fast:
            if not (0 <= k < params.K and 1 <= j <= params.J):
                raise ConfigurationError(f"observed fast pair ({k},{j}) outside the grid")

    def count(self) -> int:
        return len(self.observed_fast)


def observation_operator(params: L96Params, spec: L96ObservationSpec | None = None) -> ObservationOperator:
    spec = spec or L96ObservationSpec()
    spec.validate(params)
    mask = np.zeros(params.dim, dtype=bool)
    mask[: params.K] = True
    for k, j in spec.observed_fast:
        mask[params.fast_index(k, j)] = True
    return ObservationOperator(mask)


_SLOT_RE = re.compile(r"^(slow):(\d+)(?:-(\d+))?$|^(fast):(\d+):(\d+)$")


def parse_slots(text: str | Iterable[str]) -> list[tuple]:
    """``"slow:0-19, fast:3:2"`` -> ``[("slow", 0), ..., ("fast", 3, 2)]``."""
    items = [s.strip() for s in text.split(",")] if isinstance(text, str) else [s.strip() for s in text]
    slots = []
    for item in filter(None, items):
        m = _SLOT_RE.match(item)
        if not m:
            raise ConfigurationError(f"cannot parse parameter slot {item!r}")
        if m.group(1):
            lo = int(m.group(2))
            hi = int(m.group(3)) if m.group(3) else lo
            slots.extend(("slow", k) for k in range(lo, hi + 1))
        else:
            slots.append(("fast", int(m.group(5)), int(m.group(6))))
    if len(set(slots)) != len(slots):
        raise ConfigurationError("duplicate parameter slots")
    return slots


def _slot_name(slot) -> str:
    return f"slow:{slot[1]}" if slot[0] == "slow" else f"fast:{slot[1]}:{slot[2]}"


@dataclass(frozen=True)
class L96Kernel:
    """Fast-path description: damping arrays with unknown slots filled from lambda."""

    params: L96Params
    slow_idx: np.ndarray
    fast_idx: tuple

    @property
    def gamma(self):
        return self.params.gamma

    @property
    def forcing(self):
        return float(self.params.F)

    def damping(self, lam):
        lam = np.asarray(lam, dtype=float)
        ds = np.array(self.params.d_slow)
        df = np.array(self.params.d_fast)
        n_slow = len(self.slow_idx)
        ds[self.slow_idx] = lam[:n_slow]
        if self.fast_idx[0].size:
            df[self.fast_idx] = lam[n_slow:]
        return ds, df

    # marker consumed by advance_coupled
    coupled_rk4 = True


def build_model(params: L96Params, unknowns, obs_spec: L96ObservationSpec | None = None):
    """Generic-form model and the true values of the unknown damping slots.

    Each unknown enters through ``L = -e_i e_i^T`` so the parameter equals the
    damping coefficient itself; everything else (advection, coupling, forcing,
    known damping) lives in the nonlinearity.
    """
    obs_spec = obs_spec or L96ObservationSpec()
    obs_spec.validate(params)
    slots = parse_slots(unknowns) if isinstance(unknowns, str) else [tuple(s) for s in unknowns]
    if not slots:
        raise ConfigurationError("at least one unknown parameter slot is required")
    slow = sorted(s for s in slots if s[0] == "slow")
    fast = sorted(s for s in slots if s[0] == "fast")
    for s in slow:
        if not 0 <= s[1] < params.K:
            raise ConfigurationError(f"slot {_slot_name(s)} outside 0..{params.K - 1}")
    for s in fast:
        if (s[1], s[2]) not in obs_spec.observed_fast:
            raise ConfigurationError(f"unknown fast damping {_slot_name(s)} is not observed; it cannot be recovered")
    ordered = slow + fast
    slow_idx = np.array([s[1] for s in slow], dtype=int)
    fast_idx = (np.array([s[1] for s in fast], dtype=int), np.array([s[2] - 1 for s in fast], dtype=int))

    d_slow_known = np.array(params.d_slow)
    d_fast_known = np.array(params.d_fast)
    d_slow_known[slow_idx] = 0.0
    d_fast_known[fast_idx] = 0.0
    gamma, F = params.gamma, float(params.F)

    def nonlinearity(u):
        return kernels.l96_tendency(np.ascontiguousarray(u, dtype=float), d_slow_known, d_fast_known, gamma, F)

    ops = []
    truth = []
    for s in ordered:
        idx = s[1] if s[0] == "slow" else params.fast_index(s[1], s[2])
        ops.append(elementary_operator(params.dim, idx, -1.0, name=_slot_name(s)))
        truth.append(params.d_slow[s[1]] if s[0] == "slow" else params.d_fast[s[1], s[2] - 1])
    model = SystemModel(
        dim=params.dim,
        linear_ops=tuple(ops),
        nonlinearity=nonlinearity,
        name="l96",
        slot_names=tuple(_slot_name(s) for s in ordered),
        kernel=L96Kernel(params, slow_idx, fast_idx),
    )
    return model, np.array(truth)


def full_tendency(params: L96Params, state) -> np.ndarray:
    return kernels.l96_tendency(np.ascontiguousarray(state, dtype=float), params.d_slow, params.d_fast,
                                params.gamma, float(params.F))


def split_state(params: L96Params, state):
    state = np.asarray(state)
    return state[: params.K], state[params.K:].reshape(params.K, params.J)


@dataclass(frozen=True)
class L96Bounds:
    d_star: float
    rho_star_sq: float
    gamma_norm_sq: float
    d_norm_sq: float
    rho_dot_star_sq: float

    @property
    def rho_star(self) -> float:
        return float(np.sqrt(self.rho_star_sq))


def bounds(params: L96Params) -> L96Bounds:
    """Absorbing-ball radius and the time-derivative bound."""
    if np.any(params.d_slow <= 0) or np.any(params.d_fast <= 0):
        raise ConfigurationError("all damping coefficients must be positive")
    d_star = float(min(params.d_slow.min(), params.d_fast.min()))
    rho_sq = 2.0 * params.K * params.F ** 2 / d_star ** 2
    g_sq = float(np.sum(params.gamma ** 2) / params.K)
    d_sq = float(np.sum(params.d_slow ** 2) + np.sum(params.d_fast ** 2))
    rho_dot_sq = 4.0 * ((1.0 + g_sq) * rho_sq + d_sq + g_sq) * rho_sq
    return L96Bounds(d_star, rho_sq, g_sq, d_sq, rho_dot_sq)


class EnergyBalance(NamedTuple):
    direct: float  # <state, tendency>
    balance: float  # -sum d_k u_k^2 - sum d_kj v_kj^2 + F sum u_k
    residual: float


def energy_residual(params: L96Params, state) -> EnergyBalance:
    """Compare 1/2 d/dt |state|^2 from the tendency with the closed-form balance."""
    state = np.asarray(state, dtype=float)
    u, v = split_state(params, state)
    direct = float(np.dot(state, full_tendency(params, state)))
    balance = float(-np.dot(params.d_slow, u * u) - np.sum(params.d_fast * v * v) + params.F * u.sum())
    return EnergyBalance(direct, balance, direct - balance)


def observed_fraction(n_slow: int, J: int, n_fast_observed: int) -> float:
    if min(n_slow, J, n_fast_observed) < 0:
        raise ConfigurationError("counts must be nonnegative")
    return (n_slow + n_fast_observed) / (n_slow * (J + 1))


@dataclass(frozen=True)
class EtaBounds:
    eta_star: float
    eta_dot_star: float
    mu_star: float
    conditions: dict

    @property
    def all_pass(self) -> bool:
        return all(self.conditions.values())


def bound_eta(params: L96Params, mu_slow, mu_fast=None, delta: float = 1.0) -> EtaBounds:
    """State-error bound constants and the sufficient nudging conditions.

    ``mu_slow`` is a scalar or length-K vector; ``mu_fast`` a (K, J) array that
    is zero on unobserved fast variables.  The constant written ``M`` in the
    slow-gain condition is taken to be the model-error radius ``delta``.
    Conditions are advisory and never abort a run.
    """
    b = bounds(params)
    mu_slow = np.broadcast_to(np.asarray(mu_slow, dtype=float), (params.K,))
    mu_fast = np.zeros((params.K, params.J)) if mu_fast is None else np.asarray(mu_fast, dtype=float)
    observed_fast = mu_fast[mu_fast > 0]
    mu_star = float(min(mu_slow.min(), observed_fast.min() if observed_fast.size else np.inf))
    g = np.sqrt(b.gamma_norm_sq)
    rho = b.rho_star
    eta_sq = 2.0 * b.rho_star_sq / b.d_star
    eta = np.sqrt(eta_sq)
    eta_dot_sq = (4.0 * b.rho_dot_star_sq / b.d_star) * (
        2.0 * eta_sq * (16.0 + 5.0 * b.gamma_norm_sq) / mu_star
        + 4.0 * b.gamma_norm_sq * eta_sq / b.d_star
        + 4.0 * b.rho_dot_star_sq
        + 1.0
    )
    slow_need = np.maximum(b.gamma_norm_sq * b.rho_star_sq / params.d_fast.min(axis=1),
                           4.0 * delta + 2.0 * (2.0 + params.K * g) * rho)
    rhs_dot_b = (16.0 * (4.0 + g) * rho / 3.0 * mu_star ** 2
                 + 48.0 * eta * delta / 3.0 * mu_star ** 1.5
                 + 64.0 * b.gamma_norm_sq * (eta_sq * delta ** 2 / (3.0 * b.d_star) + b.rho_star_sq) * mu_star
                 + 8.0 * b.gamma_norm_sq * eta_sq * (32.0 * delta ** 2 / 3.0 + 1.0))
    conditions = {
        "slow_gain": bool(np.all(mu_slow >= slow_need)),
        "fast_gain": bool(observed_fast.size == 0 or observed_fast.min() >= 2.0 * delta),
        "mu_dot_a": bool(mu_star >= 2.0 * delta),
        "mu_dot_b": bool(mu_star ** 3 >= rhs_dot_b),
    }
    return EtaBounds(float(eta), float(np.sqrt(eta_dot_sq)), mu_star, conditions)


def random_init(seed: int, dim: int = 240) -> np.ndarray:
    """I.i.d. uniform [0, 1) entries from a seeded generator."""
    return np.random.default_rng(seed).random(dim)
