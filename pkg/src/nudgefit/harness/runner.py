"""Single runs and sweeps built from :class:`ExperimentConfig`."""
from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .. import __version__, l96, toy
from ..assimilation import Twin, assimilate
from ..core import NudgeConfig
from ..errors import ConfigurationError, NudgeFitError
from ..estimators import EstimatorState
from ..integrate import IntegratorConfig, ObservationHistory, advance_coupled
from ..rbc.grid import RBCGrid
from ..rbc.snapshot import write_snapshot
from ..rbc.solver import RBCParams, kinetic_energy, random_perturbation, spinup
from ..rbc.twin import RBCTwinConfig, run_rbc_twin
from .config import ExperimentConfig, from_preset
from .records import CSVStream, RunRecord, emit_csv, emit_plot_data

__all__ = ["run", "sweep", "columns_for", "SUMMARY_COLUMNS"]

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["cell", "status", "exit_code", "t_end", "final_state_error_rel", "final_param_error_rel",
                   "window_state_error_rel", "window_param_error_rel"]


# -- model construction -----------------------------------------------------

def _l96_setup(cfg: ExperimentConfig):
    params = l96.default_params(K=cfg.model("K"), J=cfg.model("J"), F=cfg.model("F"))
    fast = l96.parse_slots(cfg.model("observed_fast")) if cfg.model("observed_fast") else []
    spec = l96.L96ObservationSpec(frozenset((s[1], s[2]) for s in fast if s[0] == "fast"))
    model, lam_true = l96.build_model(params, cfg.unknowns or "slow:0-19", spec)
    obs = l96.observation_operator(params, spec)
    truth = l96.random_init(cfg.seed, params.dim)
    nudged = truth.copy() if cfg.twin_init else l96.random_init(cfg.seed + 1, params.dim)
    twin = Twin(model, lam_true, obs, NudgeConfig.uniform(cfg.mu, obs), truth, nudged)
    return twin, IntegratorConfig(scheme=cfg.model("scheme"), dt=cfg.dt)


def _toy_setup(cfg: ExperimentConfig):
    twin = toy.scalar_twin(cfg.model("lambda_true"), cfg.initial_guess, cfg.mu, exact=cfg.twin_init)
    return twin, IntegratorConfig(dt=cfg.dt)


def _rbc_config(cfg: ExperimentConfig) -> RBCTwinConfig:
    algorithm = cfg.algorithm if cfg.mode == "estimate" else "none"
    form = cfg.model("form") or None
    return RBCTwinConfig(
        grid=RBCGrid(cfg.model("Nx"), cfg.model("Nz")), Ra=cfg.model("Ra"), Pr=cfg.model("Pr"),
        Ra_proxy=cfg.model("Ra_proxy"), Pr_proxy=cfg.model("Pr_proxy"), algorithm=algorithm, form=form,
        mu1=cfg.mu1, mu2=cfg.mu2, n_obs=cfg.n_obs, dt=cfg.dt, t_final=cfg.t_final,
        update_interval=cfg.update_interval if algorithm != "none" else cfg.record_interval,
        fd_order=cfg.fd_order, spinup_time=cfg.model("spinup_time"), seed=cfg.seed,
        cache_dir=cfg.model("cache_dir") or None, max_skips=cfg.max_skips,
    )


def columns_for(cfg: ExperimentConfig, slot_names=()) -> list[str]:
    """Fixed CSV header for a config (known before the run starts)."""
    if cfg.mode == "simulate":
        return ["t", "kinetic_energy"] if cfg.preset == "rbc-default" else ["t", "energy", "state_norm"]
    if cfg.preset == "rbc-default":
        cols = ["t", "state_error_l2", "state_error_rel", "zeta_error_rel", "theta_error_rel", "obs_error_rel",
                "Ra", "Pr"]
        if cfg.test_mode:
            cols += ["ra_error_rel", "pr_error_rel", "param_error_rel", "delta_hat"]
        return cols + ["skipped", "cfl"]
    cols = ["t", "state_error_l2", "state_error_rel", "obs_error_l2"]
    if cfg.test_mode:
        cols += ["param_error_rel", "delta_hat"]
    cols += [f"lam[{n}]" for n in slot_names]
    return cols + ["skipped", "inverse_norm", "cond"]


def _estimator(cfg: ExperimentConfig, n_params: int):
    if cfg.mode != "estimate" or cfg.algorithm == "none":
        return None
    return EstimatorState(cfg.algorithm, np.full(n_params, cfg.initial_guess), cfg.update_interval,
                          fd_order=cfg.fd_order, cond_threshold=cfg.cond_threshold, max_skips=cfg.max_skips)


class _DeltaHat:
    """``1 - |dLam_{n+1}| / |dLam_n|`` between successive accepted updates."""

    def __init__(self):
        self.prev = None

    def __call__(self, row):
        if row.get("skipped") or "param_error_rel" not in row:
            return
        err = row["param_error_rel"]
        if self.prev is not None and self.prev > 0 and row.get("t", 0) > 0:
            row["delta_hat"] = 1.0 - err / self.prev
        self.prev = err


# -- runs ---------------------------------------------------------------------

def _simulate(cfg, emit):
    if cfg.preset == "rbc-default":
        rc = _rbc_config(cfg)
        p = RBCParams(rc.Ra, rc.Pr, rc.equation_form)
        t = 0.0
        n = int(round(cfg.t_final / cfg.record_interval))
        fields = random_perturbation(rc.grid, cfg.seed)
        emit({"t": 0.0, "kinetic_energy": kinetic_energy(rc.grid, fields)})
        for k in range(1, n + 1):
            t_next = k * cfg.record_interval
            fields = spinup(rc.grid, p, (t, t_next), initial=fields, dt_max=rc.spinup_dt_max)
            t = t_next
            emit({"t": t, "kinetic_energy": kinetic_energy(rc.grid, fields)})
        return {"final_fields": (fields, t, p)}
    twin, icfg = _toy_setup(cfg) if cfg.preset == "scalar-toy" else _l96_setup(cfg)
    # truth only: the companion copy is a duplicate with zero gains
    free = NudgeConfig.uniform(0.0, twin.obs)
    u = np.array(twin.truth, dtype=float)
    hist = ObservationHistory(icfg.sample_spacing)
    emit({"t": 0.0, "energy": 0.5 * float(u @ u), "state_norm": float(np.linalg.norm(u))})
    t = 0.0
    for k in range(1, int(round(cfg.t_final / cfg.record_interval)) + 1):
        t_next = k * cfg.record_interval
        u, _, hist = advance_coupled(twin.model, twin.model, twin.lambda_true, twin.lambda_true, (u, u.copy()),
                                     free, twin.obs, (t, t_next), icfg, hist)
        t = t_next
        emit({"t": t, "energy": 0.5 * float(u @ u), "state_norm": float(np.linalg.norm(u))})
    return {}


def _assimilate_ode(cfg, emit):
    twin, icfg = _toy_setup(cfg) if cfg.preset == "scalar-toy" else _l96_setup(cfg)
    est = _estimator(cfg, twin.model.n_params)
    proxy = None
    if cfg.mode == "assimilate" and cfg.algorithm != "none":
        proxy = np.full(twin.model.n_params, cfg.initial_guess)
    rows = assimilate(twin, cfg.t_final, icfg, estimator=est, lambda_proxy=proxy,
                      record_interval=cfg.record_interval, test_mode=cfg.test_mode, on_row=emit)
    return {"slot_names": twin.model.slot_names, "rows": rows}


def _assimilate_rbc(cfg, emit, out_dir):
    rc = _rbc_config(cfg)
    result = run_rbc_twin(rc, test_mode=cfg.test_mode, on_row=emit)
    if out_dir is not None and cfg.model("snapshots"):
        meta = {"seed": cfg.seed, "algorithm": rc.algorithm}
        write_snapshot(out_dir / "truth_final.bin", result.truth, cfg.t_final, RBCParams(rc.Ra, rc.Pr, rc.equation_form),
                       dict(meta, role="truth"))
        write_snapshot(out_dir / "nudged_final.bin", result.nudged, cfg.t_final, result.params, dict(meta, role="nudged"))
    return {"rbc_meta": result.metadata}


def _slot_names(cfg):
    if cfg.mode == "simulate" or cfg.preset == "rbc-default":
        return ()
    if cfg.preset == "scalar-toy":
        return toy.scalar_model().slot_names
    twin, _ = _l96_setup(cfg)
    return twin.model.slot_names


def run(cfg: ExperimentConfig, out_dir=None, write_plot: bool = True) -> RunRecord:
    """Execute one experiment; with ``out_dir`` the CSV is streamed to ``run.csv``.

    On failure the partial CSV is closed (still parseable) and the exception
    is re-raised with ``record`` attached.
    """
    cfg.validate()
    out = Path(out_dir) if out_dir else (Path(cfg.output_dir) if cfg.output_dir else None)
    columns = columns_for(cfg, _slot_names(cfg))
    metadata = {"nudgefit_version": __version__}
    metadata.update({f"config.{k}": v for k, v in cfg.as_items() if k != "output_dir"})
    if cfg.preset == "rbc-default":
        metadata["boundary_conditions"] = "free-slip walls, fixed temperature (substitute discretization)"
    record = RunRecord(columns=columns, metadata=metadata)
    stream = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        stream = CSVStream(out / "run.csv", columns, metadata)
    delta = _DeltaHat()

    def emit(row):
        row = {k: row[k] for k in row if k in columns}
        if cfg.test_mode and cfg.mode == "estimate":
            delta(row)
        record.rows.append(row)
        if stream is not None:
            stream.write(row)

    t0 = time.perf_counter()
    try:
        if cfg.mode == "simulate":
            extra = _simulate(cfg, emit)
            if out is not None and "final_fields" in extra:
                fields, t, p = extra["final_fields"]
                write_snapshot(out / "truth_final.bin", fields, t, p, {"seed": cfg.seed, "role": "simulate"})
        elif cfg.preset == "rbc-default":
            _assimilate_rbc(cfg, emit, out)
        else:
            _assimilate_ode(cfg, emit)
    except BaseException as exc:
        record.status = type(exc).__name__
        record.metadata["wall_time_s"] = time.perf_counter() - t0
        if stream is not None:
            stream.close({"status": record.status, "wall_time_s": record.metadata["wall_time_s"]})
            if write_plot:
                emit_plot_data(record, out / "plot.csv")
        exc.record = record
        raise
    record.metadata["wall_time_s"] = time.perf_counter() - t0
    if stream is not None:
        stream.close({"wall_time_s": record.metadata["wall_time_s"]})
        if write_plot:
            emit_plot_data(record, out / "plot.csv")
    return record


# -- sweeps -------------------------------------------------------------------

def _cells(template: ExperimentConfig, axes: dict):
    names = list(axes)
    for values in itertools.product(*(axes[n] for n in names)):
        yield dict(zip(names, values))


def _cell_config(template: ExperimentConfig, changes: dict) -> ExperimentConfig:
    from .config import _FIELD_TYPES, _coerce
    direct = {}
    for k, v in changes.items():
        direct[k] = _coerce(k, v) if k in _FIELD_TYPES else v
    cfg = template.replace(**direct)
    return cfg.validate()


def _run_cell(args):
    index, cfg, out = args
    row = {"cell": index}
    try:
        rec = run(cfg, out_dir=out, write_plot=out is not None)
        row.update(status="ok", exit_code=0)
    except NudgeFitError as exc:
        rec = getattr(exc, "record", None)
        row.update(status=type(exc).__name__, exit_code=exc.exit_code)
    if rec is not None and rec.rows:
        lo, hi = cfg.summary_window
        row["t_end"] = rec.final.get("t")
        row["final_state_error_rel"] = rec.final.get("state_error_rel")
        row["final_param_error_rel"] = rec.final.get("param_error_rel")
        row["window_state_error_rel"] = rec.window_mean("state_error_rel", lo * cfg.t_final, hi * cfg.t_final)
        if "param_error_rel" in rec.columns:
            row["window_param_error_rel"] = rec.window_mean("param_error_rel", lo * cfg.t_final, hi * cfg.t_final)
    return row, rec


def sweep(template: ExperimentConfig, axes: dict, out_dir=None, workers: int = 1):
    """Run the Cartesian product of ``axes``; returns ``(records, summary)``.

    ``summary`` is a :class:`RunRecord` whose rows are ordered by cell index.
    A failing cell is recorded and the sweep continues.
    """
    if not axes:
        axes = {}
    for name, values in axes.items():
        if not list(values):
            raise ConfigurationError(f"sweep axis {name!r} is empty")
    cells = list(_cells(template, axes))
    configs = [_cell_config(template, c) for c in cells]
    out = Path(out_dir) if out_dir else None
    jobs = [(i, cfg, (out / f"cell{i:03d}") if out else None) for i, cfg in enumerate(configs)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    columns = SUMMARY_COLUMNS[:1] + list(axes) + SUMMARY_COLUMNS[1:]
    summary = RunRecord(columns=columns, metadata={"nudgefit_version": __version__, "cells": len(cells)})
    records = []
    for (row, rec), changes in zip(results, cells):
        row.update(changes)
        summary.rows.append(row)
        records.append(rec)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        emit_csv(summary, out / "summary.csv")
    return records, summary


def quick(preset: str, **changes) -> RunRecord:
    """Convenience: run a preset with a few changes and no output files."""
    return run(from_preset(preset, **changes))
