"""Coupled truth/nudged runs with scheduled parameter updates (generic models)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import NudgeConfig, ObservationOperator, SystemModel, observe
from .errors import IntegrationBlowup
from .estimators import EstimatorState, UpdateContext, schedule_and_apply
from .integrate import IntegratorConfig, ObservationHistory, advance_coupled

__all__ = ["Twin", "assimilate"]


@dataclass
class Twin:
    """Truth model with its parameters plus the nudged copy it drives."""

    model: SystemModel
    lambda_true: np.ndarray
    obs: ObservationOperator
    nudge: NudgeConfig
    truth: np.ndarray
    nudged: np.ndarray


def _row(t, twin, truth, nudged, lam, slot_names, test_mode):
    w = nudged - truth
    norm_truth = np.linalg.norm(truth)
    row = {
        "t": t,
        "state_error_l2": float(np.linalg.norm(w)),
        "state_error_rel": float(np.linalg.norm(w) / norm_truth) if norm_truth > 0 else float("nan"),
        "obs_error_l2": float(np.linalg.norm(observe(twin.obs, w))),
    }
    if test_mode:
        row["param_error_rel"] = float(np.linalg.norm(lam - twin.lambda_true) / np.linalg.norm(twin.lambda_true))
    for name, value in zip(slot_names, lam):
        row[f"lam[{name}]"] = float(value)
    return row


def assimilate(twin: Twin, t_final: float, cfg: IntegratorConfig | None = None,
               estimator: EstimatorState | None = None, lambda_proxy=None,
               record_interval: float = 0.1, test_mode: bool = True,
               on_row: Callable[[dict], None] | None = None) -> list[dict]:
    """Run the twin to ``t_final``; returns one row per record/update time.

    Without an estimator the proxy parameters stay fixed (``lambda_proxy``,
    defaulting to the truth).  ``on_row`` sees each row as soon as it exists,
    which lets callers flush partial output before a blowup propagates.
    """
    cfg = cfg or IntegratorConfig()
    model = twin.model
    names = model.slot_names or tuple(f"p{k}" for k in range(model.n_params))
    if estimator is not None:
        lam = estimator.lambda_current
        interval = estimator.update_interval
        estimator.schedule(0.0)
    else:
        lam = np.array(twin.lambda_true if lambda_proxy is None else lambda_proxy, dtype=float)
        interval = record_interval
    truth, nudged = np.array(twin.truth, dtype=float), np.array(twin.nudged, dtype=float)
    history = ObservationHistory(cfg.sample_spacing, capacity=8)
    rows = []

    def emit(row):
        rows.append(row)
        if on_row is not None:
            on_row(row)

    emit(_row(0.0, twin, truth, nudged, lam, names, test_mode))
    n_intervals = int(round(t_final / interval))
    if abs(n_intervals * interval - t_final) > 1e-9 * max(1.0, t_final):
        n_intervals = int(np.ceil(t_final / interval - 1e-9))
    t = 0.0
    for n in range(1, n_intervals + 1):
        t_next = min(n * interval, t_final)
        try:
            truth, nudged, history = advance_coupled(model, model, twin.lambda_true, lam, (truth, nudged),
                                                     twin.nudge, twin.obs, (t, t_next), cfg, history)
        except IntegrationBlowup:
            twin.truth, twin.nudged = truth, nudged
            raise
        t = t_next
        extra = {}
        if estimator is not None:
            before = estimator.total_skips
            ctx = UpdateContext(t=t, model=model, obs=twin.obs, nudge=twin.nudge, u_tilde=nudged,
                                truth_obs=observe(twin.obs, truth), history=history)
            schedule_and_apply(estimator, ctx)
            lam = estimator.lambda_current
            skipped = estimator.total_skips > before
            extra["skipped"] = int(skipped)
            if not skipped:
                rec = estimator.history[-1]
                extra["inverse_norm"] = rec.inverse_norm
                extra["cond"] = rec.cond
        row = _row(t, twin, truth, nudged, lam, names, test_mode)
        row.update(extra)
        emit(row)
    twin.truth, twin.nudged = truth, nudged
    return rows
