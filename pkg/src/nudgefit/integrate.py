"""Time stepping for the coupled truth/nudged pair and observed-derivative stencils."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .core import NudgeConfig, ObservationOperator, SystemModel, observe, rhs_nudged, rhs_reference
from .errors import ConfigurationError, IntegrationBlowup, NotReady, StiffnessError

__all__ = [
    "IntegratorConfig",
    "ObservationHistory",
    "rk4_step",
    "rk45_step",
    "advance_coupled",
    "backward_fd",
    "FD_STENCILS",
]

Rhs = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "rk4-fixed"
    dt: float = 1e-3
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    dt_obs: float | None = None
    use_kernel: bool = True

    def __post_init__(self):
        if self.scheme not in ("rk4-fixed", "rk45-adaptive"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if not (self.dt > 0 and self.rel_tol > 0 and self.abs_tol > 0):
            raise ConfigurationError("dt and tolerances must be positive")
        if self.dt_obs is not None and not self.dt_obs > 0:
            raise ConfigurationError("dt_obs must be positive")

    @property
    def sample_spacing(self) -> float:
        return self.dt if self.dt_obs is None else self.dt_obs


class ObservationHistory:
    """Ring buffer of uniformly spaced ``(t, observed vector)`` samples."""

    def __init__(self, dt_obs: float, capacity: int = 8):
        if capacity < 4:
            raise ConfigurationError("history capacity must be >= 4")
        if not dt_obs > 0:
            raise ConfigurationError("dt_obs must be positive")
        self.dt_obs = float(dt_obs)
        self.capacity = capacity
        self._buf: deque = deque(maxlen=capacity)

    def __len__(self):
        return len(self._buf)

    def push(self, t: float, values) -> None:
        if self._buf:
            t_last = self._buf[-1][0]
            gap = t - t_last
            if abs(gap - self.dt_obs) > 1e-12 * max(abs(t), 1.0) + 1e-9 * self.dt_obs:
                raise ConfigurationError(
                    f"non-uniform observation spacing: got {gap!r}, expected {self.dt_obs!r}")
        self._buf.append((float(t), np.array(values, dtype=float, copy=True)))

    def clear(self) -> None:
        self._buf.clear()

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self._buf]

    @property
    def latest(self):
        return self._buf[-1]

    def last(self, n: int) -> list[np.ndarray]:
        """The newest ``n`` samples, newest first."""
        if n > len(self._buf):
            raise NotReady(f"need {n} samples, have {len(self._buf)}")
        return [self._buf[-1 - i][1] for i in range(n)]


# Backward-difference weights, newest sample first, to be divided by (denominator * dt).
FD_STENCILS = {
    1: ((1.0, -1.0), 1.0),
    2: ((3.0, -4.0, 1.0), 2.0),
    3: ((11.0, -18.0, 9.0, -2.0), 6.0),
}


def backward_fd(history: ObservationHistory, order: int = 3) -> np.ndarray:
    """Order-``order`` backward difference of the observations at the newest sample."""
    if order not in FD_STENCILS:
        raise ConfigurationError(f"fd order must be 1, 2 or 3, got {order}")
    weights, denom = FD_STENCILS[order]
    samples = history.last(len(weights))
    acc = np.zeros_like(samples[0])
    for c, s in zip(weights, samples):
        acc += c * s
    return acc / (denom * history.dt_obs)


def _check_finite(y, t):
    if not np.all(np.isfinite(y)):
        raise IntegrationBlowup("non-finite state during integration", t=t)


def rk4_step(rhs: Rhs, t: float, state, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step."""
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    y = np.asarray(state, dtype=float)
    k1 = rhs(t, y)
    _check_finite(k1, t)
    k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = rhs(t + dt, y + dt * k3)
    y_new = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _check_finite(y_new, t + dt)
    return y_new


# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Continuous extension: y(t + th) = y + h * K^T (P @ [th, th^2, th^3, th^4]).
_DP_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


def _dp_attempt(rhs, t, y, h):
    K = np.empty((7, y.size))
    K[0] = rhs(t, y)
    for i in range(1, 7):
        dy = sum(a * K[j] for j, a in enumerate(_DP_A[i]))
        K[i] = rhs(t + _DP_C[i] * h, y + h * dy)
    y_new = y + h * (_DP_B @ K)
    err = h * (_DP_E @ K)
    return y_new, err, K


def _dp_error_norm(err, y, y_new, rel_tol, abs_tol):
    scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def rk45_step(rhs: Rhs, t: float, state, dt_try: float, rel_tol: float = 1e-9,
              abs_tol: float = 1e-11, t_scale: float | None = None, return_stages: bool = False):
    """One accepted Dormand-Prince step.

    Returns ``(y_new, dt_next, t_next)``; with ``return_stages`` also the stage
    matrix and the step actually taken (for dense output).
    """
    if not (rel_tol > 0 and abs_tol > 0 and dt_try > 0):
        raise ConfigurationError("tolerances and dt_try must be positive")
    y = np.asarray(state, dtype=float)
    h = float(dt_try)
    t_scale = max(abs(t), 1.0) if t_scale is None else t_scale
    while True:
        if h < 1e-14 * t_scale:
            raise StiffnessError(f"step size underflow (h={h:.3e})", t=t)
        y_new, err, K = _dp_attempt(rhs, t, y, h)
        if not np.all(np.isfinite(y_new)):
            h *= _MIN_FACTOR
            continue
        en = _dp_error_norm(err, y, y_new, rel_tol, abs_tol)
        if en <= 1.0:
            factor = _MAX_FACTOR if en == 0.0 else min(_MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * en ** -0.2))
            out = (y_new, h * factor, t + h)
            return out + (K, h) if return_stages else out
        h *= max(_MIN_FACTOR, _SAFETY * en ** -0.2)


def dp_dense(y0, K, h, theta):
    """Evaluate the Dormand-Prince continuous extension at fraction ``theta`` of the step."""
    powers = np.array([theta, theta ** 2, theta ** 3, theta ** 4])
    return y0 + h * (K.T @ (_DP_P @ powers))


def _coupled_rhs(truth_model, nudged_model, lam_true, lam_proxy, nudge, obs):
    d = truth_model.dim

    def rhs(t, s):
        u, ut = s[:d], s[d:]
        out = np.empty_like(s)
        out[:d] = rhs_reference(truth_model, lam_true, u)
        out[d:] = rhs_nudged(nudged_model, lam_proxy, ut, observe(obs, u), nudge, obs)
        return out

    return rhs


def _n_steps(t0, t1, dt):
    n = (t1 - t0) / dt
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
        raise ConfigurationError(f"t_span length {t1 - t0!r} is not a multiple of dt={dt!r}")
    return k


def advance_coupled(truth_model: SystemModel, nudged_model: SystemModel, lambda_true, lambda_proxy,
                    states, nudge: NudgeConfig, obs: ObservationOperator, t_span,
                    cfg: IntegratorConfig | None = None, history: ObservationHistory | None = None):
    """Integrate truth and nudged systems together over ``t_span``.

    ``states`` is ``(truth, nudged)``.  Observations ``I_h u`` are appended to
    ``history`` at spacing ``cfg.sample_spacing``; an empty history first
    receives the initial sample.  Returns ``(truth, nudged, history)``.
    """
    cfg = cfg or IntegratorConfig()
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ConfigurationError("t_span must be increasing")
    truth = np.array(states[0], dtype=float)
    nudged = np.array(states[1], dtype=float)
    if truth.shape != (truth_model.dim,) or nudged.shape != (nudged_model.dim,) or truth_model.dim != nudged_model.dim:
        raise ConfigurationError("truth/nudged states are not dimension-compatible")
    if history is None:
        history = ObservationHistory(cfg.sample_spacing)
    if len(history) == 0:
        history.push(t0, observe(obs, truth))

    if cfg.scheme == "rk4-fixed":
        n = _n_steps(t0, t1, cfg.dt)
        if cfg.dt_obs is not None and abs(cfg.dt_obs - cfg.dt) > 1e-15 * cfg.dt:
            raise ConfigurationError("fixed-step runs sample observations every step (dt_obs = dt)")
        kernel_t, kernel_n = truth_model.kernel, nudged_model.kernel
        if cfg.use_kernel and kernel_t is not None and kernel_n is not None and hasattr(kernel_t, "coupled_rk4"):
            record = np.empty((min(n, 1024), truth.size))
            _advance_kernel(kernel_t, kernel_n, lambda_true, lambda_proxy, truth, nudged, nudge,
                            t0, cfg.dt, n, record, history, obs)
            return truth, nudged, history
        rhs = _coupled_rhs(truth_model, nudged_model, lambda_true, lambda_proxy, nudge, obs)
        d = truth.size
        s = np.concatenate([truth, nudged])
        for i in range(n):
            t = t0 + i * cfg.dt
            s = rk4_step(rhs, t, s, cfg.dt)
            history.push(t0 + (i + 1) * cfg.dt, observe(obs, s[:d]))
        return s[:d].copy(), s[d:].copy(), history

    rhs = _coupled_rhs(truth_model, nudged_model, lambda_true, lambda_proxy, nudge, obs)
    d = truth.size
    s = np.concatenate([truth, nudged])
    t = t0
    h = cfg.dt
    spacing = history.dt_obs
    t_base, _ = history.latest
    k_next = int(math.floor((t - t_base) / spacing + 1e-9)) + 1
    while t < t1 - 1e-14 * max(1.0, abs(t1)):
        h = min(h, t1 - t)
        y_new, h_next, t_new, K, h_used = rk45_step(rhs, t, s, h, cfg.rel_tol, cfg.abs_tol,
                                                    t_scale=max(1.0, abs(t1)), return_stages=True)
        while True:
            t_obs = t_base + k_next * spacing
            if t_obs > t_new + 1e-12 * max(1.0, abs(t_new)) or t_obs > t1 + 1e-12 * max(1.0, abs(t1)):
                break
            theta = (t_obs - t) / h_used
            y_obs = y_new if abs(theta - 1.0) < 1e-12 else dp_dense(s, K, h_used, theta)
            history.push(t_obs, observe(obs, y_obs[:d]))
            k_next += 1
        s, t = y_new, t_new
        h = h_next if t_new < t1 else h
        if abs(t - t1) <= 1e-14 * max(1.0, abs(t1)):
            t = t1
    return s[:d].copy(), s[d:].copy(), history


def _advance_kernel(kt, kn, lam_true, lam_proxy, truth, nudged, nudge, t0, dt, n, record, history, obs):
    ds_t, df_t = kt.damping(lam_true)
    ds_p, df_p = kn.damping(lam_proxy)
    gains = np.ascontiguousarray(nudge.gains, dtype=float)
    cap = record.shape[0]
    done = 0
    while done < n:
        chunk = min(cap, n - done)
        bad = kernels.l96_coupled_rk4(truth, nudged, ds_t, df_t, ds_p, df_p, kt.gamma, kt.forcing,
                                      gains, dt, chunk, record)
        if bad >= 0:
            raise IntegrationBlowup("non-finite state during integration", t=t0 + (done + bad + 1) * dt)
        first = max(0, chunk - history.capacity)
        if first:
            history.clear()
        for i in range(first, chunk):
            history.push(t0 + (done + i + 1) * dt, observe(obs, record[i]))
        done += chunk
