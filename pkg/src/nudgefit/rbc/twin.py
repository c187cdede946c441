"""Truth/nudged convection runs with scheduled (Ra, Pr) updates."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import ConfigurationError, DegenerateUpdate, NotReady
from ..estimators import EstimatorState, UpdateRecord, register_skip, register_update
from ..integrate import ObservationHistory, backward_fd
from .grid import RBCGrid, galerkin_project
from .snapshot import read_snapshot, write_snapshot
from .solver import RBCFields, RBCNudge, RBCParams, RBCStepper, spinup
from .updates import rls_pr_ra_update, rni_plus_ra_pr_update, rni_ra_pr_update

__all__ = ["RBCTwinConfig", "RBCTwinResult", "initial_truth", "run_rbc_twin"]

log = logging.getLogger(__name__)

RBC_ALGORITHMS = ("none", "rni", "rni-plus", "rls")


@dataclass
class RBCTwinConfig:
    grid: RBCGrid = field(default_factory=RBCGrid)
    Ra: float = 1e5
    Pr: float = 1.0
    Ra_proxy: float = 9e4
    Pr_proxy: float = 1.1
    algorithm: str = "rls"
    form: str | None = None
    mu1: float = 8000.0
    mu2: float = 8000.0
    n_obs: int = 16
    dt: float = 1e-5
    t_final: float = 0.5
    update_interval: float = 0.05
    fd_order: int = 3
    spinup_time: float = 0.2
    spinup_dt_max: float = 1e-4
    seed: int = 0
    cache_dir: str | None = None
    max_skips: int = 100

    def __post_init__(self):
        if self.algorithm not in RBC_ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; expected one of {RBC_ALGORITHMS}")
        for name in ("dt", "t_final", "update_interval", "Ra", "Pr", "Ra_proxy", "Pr_proxy"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.spinup_time < 0:
            raise ConfigurationError("spinup_time must be nonnegative")
        ratio = self.update_interval / self.dt
        if abs(ratio - round(ratio)) > 1e-6 * ratio:
            raise ConfigurationError("update_interval must be a multiple of dt")
        if self.algorithm in ("rni", "rni-plus") and not self.mu2 > 0:
            raise ConfigurationError("relaxation Newton updates need mu2 > 0")

    @property
    def equation_form(self) -> str:
        if self.form is not None:
            return self.form
        return "pr-outside" if self.algorithm == "rls" else "pr-split"

    @property
    def steps_per_update(self) -> int:
        return int(round(self.update_interval / self.dt))


@dataclass
class RBCTwinResult:
    rows: list
    truth: RBCFields
    nudged: RBCFields
    params: RBCParams
    estimator: EstimatorState | None
    nudge: RBCNudge
    metadata: dict


def initial_truth(cfg: RBCTwinConfig) -> RBCFields:
    """Spun-up convective state, cached as a snapshot when ``cache_dir`` is set."""
    truth = RBCParams(cfg.Ra, cfg.Pr, cfg.equation_form)
    g = cfg.grid
    cache = None
    if cfg.cache_dir:
        key = f"spinup_{g.Nx}x{g.Nz}_Ra{cfg.Ra:g}_Pr{cfg.Pr:g}_{truth.form}_t{cfg.spinup_time:g}_s{cfg.seed}.bin"
        cache = Path(cfg.cache_dir) / key
        if cache.exists():
            fields, _, _ = read_snapshot(cache)
            return fields
    fields = spinup(g, truth, (0.0, cfg.spinup_time), seed=cfg.seed, dt_max=cfg.spinup_dt_max)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        write_snapshot(cache, fields, cfg.spinup_time, truth, {"seed": cfg.seed, "role": "spinup"})
    return fields


def _rel(a, b, grid):
    den = grid.norm_sq(b)
    return float(np.sqrt(grid.norm_sq(a - b) / den)) if den > 0 else float("nan")


def _params_vector(algorithm, p: RBCParams):
    return np.array([p.Pr, p.Ra]) if algorithm == "rls" else np.array([p.Ra, p.inv_pr])


def _params_from_vector(algorithm, lam, form) -> RBCParams:
    if algorithm == "rls":
        pr, ra = lam
    else:
        ra, ipr = lam
        pr = 1.0 / ipr if ipr != 0 else np.inf
    if not (np.isfinite(ra) and np.isfinite(pr) and ra > 0 and pr > 0):
        raise DegenerateUpdate(f"update left the physical range (Ra={ra:.6g}, Pr={pr:.6g})", reason="nonphysical")
    return RBCParams(float(ra), float(pr), form)


def run_rbc_twin(cfg: RBCTwinConfig, initial: RBCFields | None = None, test_mode: bool = True,
                 on_row: Callable[[dict], None] | None = None) -> RBCTwinResult:
    g = cfg.grid
    form = cfg.equation_form
    truth_p = RBCParams(cfg.Ra, cfg.Pr, form)
    proxy = RBCParams(cfg.Ra_proxy, cfg.Pr_proxy, form) if cfg.algorithm != "none" else truth_p
    truth0 = initial if initial is not None else initial_truth(cfg)
    nudge = RBCNudge(cfg.mu1, cfg.mu2, cfg.n_obs).capped(cfg.dt)
    if nudge.mu1 < cfg.mu1 or nudge.mu2 < cfg.mu2:
        log.info("nudging gains capped to (%g, %g) by dt=%g", nudge.mu1, nudge.mu2, cfg.dt)
    n = cfg.n_obs
    nudged0 = RBCFields(g, galerkin_project(g, truth0.zeta, n), galerkin_project(g, truth0.theta, n))
    stepper = RBCStepper(g, [truth_p, proxy], np.stack([truth0.zeta, nudged0.zeta]),
                         np.stack([truth0.theta, nudged0.theta]), nudge=nudge)
    est = None
    if cfg.algorithm != "none":
        est = EstimatorState(cfg.algorithm, _params_vector(cfg.algorithm, proxy), cfg.update_interval,
                             fd_order=cfg.fd_order, max_skips=cfg.max_skips)
    history = ObservationHistory(cfg.dt, capacity=8)
    window = cfg.fd_order + 1
    rows: list[dict] = []

    def emit(t, skipped=None, rec=None):
        zt, tt = stepper.zeta[0], stepper.theta[0]
        zn, tn = stepper.zeta[1], stepper.theta[1]
        p = stepper.params[1]
        den = g.norm_sq(zt) + g.norm_sq(tt)
        num = g.norm_sq(zn - zt) + g.norm_sq(tn - tt)
        row = {
            "t": t,
            "state_error_l2": float(np.sqrt(num)),
            "state_error_rel": float(np.sqrt(num / den)) if den > 0 else float("nan"),
            "zeta_error_rel": _rel(zn, zt, g),
            "theta_error_rel": _rel(tn, tt, g),
            "obs_error_rel": _rel(galerkin_project(g, zn, n), galerkin_project(g, zt, n), g),
            "Ra": p.Ra,
            "Pr": p.Pr,
        }
        if test_mode:
            ra_err = abs(p.Ra - cfg.Ra) / cfg.Ra
            pr_err = abs(p.Pr - cfg.Pr) / cfg.Pr
            row.update(ra_error_rel=ra_err, pr_error_rel=pr_err, param_error_rel=max(ra_err, pr_err))
        if skipped is not None:
            row["skipped"] = int(skipped)
        if rec is not None:
            row["inverse_norm"] = rec.inverse_norm
        row["cfl"] = stepper.last_cfl
        rows.append(row)
        if on_row is not None:
            on_row(row)

    def observe_truth():
        return np.ascontiguousarray(stepper.zeta[0, :n + 1, :n]).view(float)

    emit(0.0)
    n_updates = int(round(cfg.t_final / cfg.update_interval))
    per = cfg.steps_per_update
    step = 0
    for k in range(1, n_updates + 1):
        history.clear()
        for i in range(per):
            stepper.step(cfg.dt)
            step += 1
            stepper.t = step * cfg.dt
            if i >= per - window:
                history.push(stepper.t, observe_truth())
        t = k * cfg.update_interval
        if est is None:
            emit(t)
            continue
        skipped, rec = False, None
        try:
            truth_obs = RBCFields(g, galerkin_project(g, stepper.zeta[0], n), galerkin_project(g, stepper.theta[0], n))
            nudged = stepper.member(1)
            current = stepper.params[1]
            if cfg.algorithm == "rls":
                dz = np.zeros(g.shape, dtype=complex)
                dz[:n + 1, :n] = backward_fd(history, cfg.fd_order).view(complex).reshape(n + 1, n)
                new = rls_pr_ra_update(g, nudged, dz, nudge)
            elif cfg.algorithm == "rni":
                new = rni_ra_pr_update(g, truth_obs, nudged, current, nudge)
            else:
                new = rni_plus_ra_pr_update(g, truth_obs, nudged, current, nudge)
            params = _params_from_vector(cfg.algorithm, new, form)
        except (DegenerateUpdate, NotReady) as exc:
            register_skip(est, t, exc)
            skipped = True
        else:
            rec = UpdateRecord(t, np.array(new, dtype=float), _rel(nudged.zeta, truth_obs.zeta, g), float("nan"))
            register_update(est, new, rec)
            stepper.params[1] = params
        emit(t, skipped=skipped, rec=rec)
    meta = {
        "grid": f"{g.Nx}x{g.Nz}", "form": form, "boundary_conditions": "free-slip, fixed temperature",
        "mu1_effective": nudge.mu1, "mu2_effective": nudge.mu2, "dt": cfg.dt,
    }
    return RBCTwinResult(rows, stepper.member(0), stepper.member(1), stepper.params[1], est, nudge, meta)
