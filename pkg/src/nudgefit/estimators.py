"""Parameter updates driven by the observed state error of a nudged model.

Three update rules are provided:

``rni``
    Relaxation Newton iteration.  For each parameter the observed error energy
    ``E_k = 1/2 |sqrt(M) P_k I_h w|^2`` is driven to zero by a diagonal Newton
    step with slope ``1/2 <L_k u~, P_k I_h w>``.  ``P_k`` restricts the error
    to the rows ``L_k`` acts on (``localize=True``); with ``localize=False``
    every parameter sees the full observed error.
``rni-plus``
    The same step with the dropped linear and nonlinear terms reinstated,
    nonlinearities evaluated on the observed projections only.
``rls``
    Relaxation least squares: choose the parameters that make the nudged
    model reproduce the observed time derivative in the least-squares sense.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import NudgeConfig, ObservationOperator, SystemModel, observe
from .errors import ConfigurationError, DegenerateUpdate, NotReady, PermanentDegeneracy
from .integrate import ObservationHistory, backward_fd

log = logging.getLogger(__name__)

__all__ = [
    "RNI_REL_THRESHOLD",
    "RNIWorkspace",
    "RLSNormalSystem",
    "EstimatorState",
    "UpdateContext",
    "UpdateRecord",
    "ContractionDiagnostics",
    "rni_workspace",
    "rni_solvable",
    "rni_update",
    "rni_plus_update",
    "rls_assemble",
    "rls_solve",
    "schedule_and_apply",
    "register_skip",
    "register_update",
    "contraction_report",
    "ALGORITHMS",
]

RNI_REL_THRESHOLD = 1e-14
ALGORITHMS = ("rni", "rni-plus", "rls")


@dataclass(frozen=True)
class RNIWorkspace:
    E: np.ndarray
    Ldiag: np.ndarray
    lu_norms: np.ndarray
    w_norms: np.ndarray
    increments: np.ndarray  # |sqrt(M) P_k I_h w|^2, i.e. 2 E_k


def _localized_errors(model: SystemModel, w_obs, localize: bool):
    if not localize:
        return [w_obs] * model.n_params
    return [np.where(op.support_mask(), w_obs, 0.0) for op in model.linear_ops]


def rni_workspace(model: SystemModel, nudge: NudgeConfig, u_tilde, w_obs, localize: bool = True) -> RNIWorkspace:
    u_tilde = np.asarray(u_tilde, dtype=float)
    w_obs = np.asarray(w_obs, dtype=float)
    if u_tilde.shape != (model.dim,) or w_obs.shape != (model.dim,):
        raise ConfigurationError("state / observed error length does not match the model")
    p = model.n_params
    E = np.empty(p)
    Ldiag = np.empty(p)
    lu_norms = np.empty(p)
    w_norms = np.empty(p)
    incr = np.empty(p)
    for k, (op, wk) in enumerate(zip(model.linear_ops, _localized_errors(model, w_obs, localize))):
        lu = op(u_tilde)
        incr[k] = float(np.dot(nudge.gains * wk, wk))
        E[k] = 0.5 * incr[k]
        Ldiag[k] = 0.5 * float(np.dot(lu, wk))
        lu_norms[k] = np.linalg.norm(lu)
        w_norms[k] = np.linalg.norm(wk)
    return RNIWorkspace(E=E, Ldiag=Ldiag, lu_norms=lu_norms, w_norms=w_norms, increments=incr)


def rni_solvable(ws: RNIWorkspace, threshold: float = RNI_REL_THRESHOLD) -> bool:
    """True iff every diagonal slope is nonzero relative to its factors."""
    scale = 0.5 * ws.lu_norms * ws.w_norms
    return bool(np.all(scale > 0) and np.all(np.abs(ws.Ldiag) > threshold * scale))


def rni_update(model: SystemModel, obs: ObservationOperator, nudge: NudgeConfig, u_tilde, w_obs, lam,
               localize: bool = True) -> np.ndarray:
    """One relaxation Newton step ``lam - Ldiag^{-1} E``."""
    lam = np.asarray(lam, dtype=float)
    ws = rni_workspace(model, nudge, u_tilde, observe(obs, w_obs), localize)
    if not rni_solvable(ws):
        raise DegenerateUpdate("RNI slope <L_k u~, I_h w> vanishes; deferring", reason="rni-slope")
    return lam - ws.E / ws.Ldiag


def rni_plus_update(model: SystemModel, obs: ObservationOperator, nudge: NudgeConfig, u_tilde, truth_obs, lam,
                    dw_obs_dt=None, localize: bool = True) -> np.ndarray:
    """Relaxation Newton step with the first-order terms of the error equation kept.

    The observed error equation is paired with ``P_k I_h w``; the unobservable
    nonlinear difference ``I_h(F(u~) - F(u))`` is approximated by
    ``I_h(F(I_h u~) - F(I_h u))`` and ``L_j w`` by ``L_j I_h w``.
    ``dw_obs_dt`` (the observed error tendency) defaults to zero, matching the
    quasi-steady assumption of the plain update.
    """
    lam = np.asarray(lam, dtype=float)
    u_tilde = np.asarray(u_tilde, dtype=float)
    truth_obs = observe(obs, truth_obs)
    ut_obs = observe(obs, u_tilde)
    w_obs = ut_obs - truth_obs
    ws = rni_workspace(model, nudge, u_tilde, w_obs, localize)
    if not rni_solvable(ws):
        raise DegenerateUpdate("RNI+ slope <L_k u~, I_h w> vanishes; deferring", reason="rni-slope")
    residual = nudge.gains * w_obs
    if dw_obs_dt is not None:
        residual = residual + observe(obs, dw_obs_dt)
    residual = residual - observe(obs, model.apply_linear(lam, w_obs))
    residual = residual - observe(obs, model.nonlinearity(ut_obs) - model.nonlinearity(truth_obs))
    numer = np.array([np.dot(wk, residual) for wk in _localized_errors(model, w_obs, localize)])
    return lam - numer / (2.0 * ws.Ldiag)


@dataclass(frozen=True)
class RLSNormalSystem:
    Lmat: np.ndarray
    f: np.ndarray
    K: np.ndarray
    cond_estimate: float
    eig_min: float


def _condition_from_gram(K: np.ndarray):
    ev = np.linalg.eigvalsh(K)
    lo, hi = float(ev[0]), float(ev[-1])
    if hi <= 0.0 or lo <= 4.0 * np.finfo(float).eps * K.shape[0] * hi:
        return np.inf, max(lo, 0.0)
    return float(np.sqrt(hi / lo)), lo


def rls_assemble(model: SystemModel, obs: ObservationOperator, u_tilde, dobs_dt) -> RLSNormalSystem:
    """Tall system ``Lmat lam = f`` restricted to the observed rows."""
    u_tilde = np.asarray(u_tilde, dtype=float)
    rows = obs.mask
    Lmat = observe(obs, model.linear_columns(u_tilde).T).T[rows]
    f = (observe(obs, dobs_dt) - observe(obs, model.nonlinearity(u_tilde)))[rows]
    K = Lmat.T @ Lmat
    cond, lo = _condition_from_gram(K)
    return RLSNormalSystem(Lmat=Lmat, f=f, K=K, cond_estimate=cond, eig_min=lo)


def rls_solve(system: RLSNormalSystem, cond_threshold: float = 1e8) -> np.ndarray:
    """Least-squares parameters via an SVD-based solve of the tall system."""
    if not system.cond_estimate <= cond_threshold:
        raise DegenerateUpdate(
            f"RLS columns nearly dependent (cond={system.cond_estimate:.3e} > {cond_threshold:.1e}); deferring",
            reason="rls-rank")
    lam, *_ = np.linalg.lstsq(system.Lmat, system.f, rcond=None)
    return lam


@dataclass
class UpdateRecord:
    t: float
    lam: np.ndarray
    obs_error_norm: float
    inverse_norm: float
    cond: float = float("nan")


@dataclass
class EstimatorState:
    """Mutable estimator bookkeeping for one run."""

    algorithm: str
    lambda_current: np.ndarray
    update_interval: float
    fd_order: int = 3
    cond_threshold: float = 1e8
    localize: bool = True
    max_skips: int = 100
    warn_after: int = 10
    skip_count: int = 0
    total_skips: int = 0
    history: list = field(default_factory=list)
    skips: list = field(default_factory=list)
    lambda_initial: np.ndarray | None = None
    next_update: float | None = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if not self.update_interval > 0:
            raise ConfigurationError("update_interval must be positive")
        if self.cond_threshold < 1:
            raise ConfigurationError("cond_threshold must be >= 1")
        if self.fd_order not in (1, 2, 3):
            raise ConfigurationError("fd_order must be 1, 2 or 3")
        self.lambda_current = np.array(self.lambda_current, dtype=float)
        if self.lambda_initial is None:
            self.lambda_initial = self.lambda_current.copy()

    def schedule(self, t0: float) -> None:
        self.next_update = t0 + self.update_interval

    def due(self, t: float) -> bool:
        return self.next_update is not None and t >= self.next_update - 1e-9 * self.update_interval


@dataclass
class UpdateContext:
    """What the scheduler may read at an update time (never the true parameters)."""

    t: float
    model: SystemModel
    obs: ObservationOperator
    nudge: NudgeConfig
    u_tilde: np.ndarray
    truth_obs: np.ndarray
    history: ObservationHistory | None = None


def _apply_once(est: EstimatorState, ctx: UpdateContext):
    lam = est.lambda_current
    truth_obs = observe(ctx.obs, ctx.truth_obs)
    w_obs = observe(ctx.obs, ctx.u_tilde) - truth_obs
    obs_norm = float(np.linalg.norm(w_obs))
    if est.algorithm == "rls":
        if ctx.history is None:
            raise NotReady("RLS needs an observation history")
        dobs = backward_fd(ctx.history, est.fd_order)
        system = rls_assemble(ctx.model, ctx.obs, ctx.u_tilde, dobs)
        new = rls_solve(system, est.cond_threshold)
        inv = 1.0 / system.eig_min if system.eig_min > 0 else np.inf
        return new, UpdateRecord(ctx.t, new, obs_norm, inv, system.cond_estimate)
    ws = rni_workspace(ctx.model, ctx.nudge, ctx.u_tilde, w_obs, est.localize)
    if not rni_solvable(ws):
        raise DegenerateUpdate("RNI slope vanishes; deferring", reason="rni-slope")
    if est.algorithm == "rni":
        new = rni_update(ctx.model, ctx.obs, ctx.nudge, ctx.u_tilde, w_obs, lam, est.localize)
    else:
        new = rni_plus_update(ctx.model, ctx.obs, ctx.nudge, ctx.u_tilde, truth_obs, lam, localize=est.localize)
    inv = float(1.0 / np.min(np.abs(ws.Ldiag)))
    return new, UpdateRecord(ctx.t, new, obs_norm, inv)


def register_skip(est: EstimatorState, t: float, exc: Exception) -> None:
    """Count a deferred update; escalate after ``max_skips`` in a row."""
    est.skip_count += 1
    est.total_skips += 1
    est.skips.append((t, getattr(exc, "reason", "not-ready")))
    if est.skip_count == est.warn_after:
        log.warning("%d consecutive deferred updates at t=%.6g: %s", est.skip_count, t, exc)
    if est.skip_count > est.max_skips:
        raise PermanentDegeneracy(
            f"{est.skip_count} consecutive degenerate updates (last: {exc})",
            dump={"t": t, "lambda": est.lambda_current.tolist(), "skips": est.skips[-5:]},
        ) from exc


def register_update(est: EstimatorState, new, rec: UpdateRecord) -> None:
    est.lambda_current = np.array(new, dtype=float)
    est.history.append(rec)
    est.skip_count = 0


def schedule_and_apply(est: EstimatorState, ctx: UpdateContext) -> EstimatorState:
    """Evaluate the selected update at ``ctx.t``; defer on degeneracy."""
    try:
        new, rec = _apply_once(est, ctx)
        if not np.all(np.isfinite(new)):
            raise DegenerateUpdate("update produced non-finite parameters", reason="non-finite")
    except (DegenerateUpdate, NotReady) as exc:
        register_skip(est, ctx.t, exc)
    else:
        register_update(est, new, rec)
    est.next_update = ctx.t + est.update_interval
    return est


@dataclass(frozen=True)
class ContractionDiagnostics:
    t: float
    obs_error_norm: float
    inverse_norm: float
    mu_star: float
    ratio: float = float("nan")
    delta_hat: float = float("nan")


def contraction_report(history, mu_star: float = float("nan"), lambda_true=None,
                       lambda_initial=None) -> list[ContractionDiagnostics]:
    """Per-update contraction diagnostics.

    With known truth (test mode) the empirical ratio ``r_n = |dLam^{n+1}| / |dLam^n|``
    and ``delta_hat = 1 - r_n`` are filled in.
    """
    rows = []
    prev = None if lambda_initial is None or lambda_true is None else np.linalg.norm(
        np.asarray(lambda_initial) - lambda_true)
    for rec in history:
        ratio = delta = float("nan")
        if lambda_true is not None:
            err = float(np.linalg.norm(np.asarray(rec.lam) - lambda_true))
            if prev is not None and prev > 0:
                ratio = err / prev
                delta = 1.0 - ratio
            prev = err
        rows.append(ContractionDiagnostics(rec.t, rec.obs_error_norm, rec.inverse_norm, mu_star, ratio, delta))
    return rows
