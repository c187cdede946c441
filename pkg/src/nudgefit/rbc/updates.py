"""Rayleigh and Prandtl number updates from low-mode observations.

All quantities live on the observed (Galerkin-truncated) modes.  ``z`` and
``eta`` denote the vorticity and temperature errors of the nudged copy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DegenerateUpdate
from .grid import RBCGrid, galerkin_project
from .solver import RBCFields, RBCNudge, RBCParams

__all__ = [
    "REL_THRESHOLD",
    "DET_THRESHOLD",
    "PR_FLOOR",
    "RLSSystem",
    "transport",
    "rni_ra_pr_update",
    "rni_plus_ra_pr_update",
    "rls_assemble_rbc",
    "rls_pr_ra_update",
]

REL_THRESHOLD = 1e-14
DET_THRESHOLD = 1e-12
PR_FLOOR = 1e-12


def transport(grid: RBCGrid, zeta_vel, field) -> np.ndarray:
    """Sine coefficients of ``u(zeta_vel) . grad(field)`` (no dealiasing mask)."""
    psi = np.asarray(zeta_vel) / grid.k2
    ikx = 1j * grid.kx
    w, fx = grid.to_physical_sine(np.stack([-ikx * psi, ikx * field]))
    u, fz = grid.to_physical_cosine(np.stack([grid.kz * psi, grid.kz * field]))
    return grid.to_spectral_sine(u * fx + w * fz)


def _ratio(grid, num, den_a, den_b, what):
    den = grid.inner(den_a, den_b)
    scale = np.sqrt(grid.norm_sq(den_a) * grid.norm_sq(den_b))
    if not abs(den) > REL_THRESHOLD * scale:
        raise DegenerateUpdate(f"{what} denominator {den:.3g} degenerate (scale {scale:.3g})", reason=f"rbc-{what}")
    return num / den


def _errors(grid, truth_obs: RBCFields, nudged: RBCFields, n_obs):
    P = lambda c: galerkin_project(grid, c, n_obs)  # noqa: E731
    zt, tt = P(truth_obs.zeta), P(truth_obs.theta)
    zn, tn = P(nudged.zeta), P(nudged.theta)
    return zt, tt, zn, tn, zn - zt, tn - tt


def _require_temperature_nudging(nudge: RBCNudge):
    if not nudge.mu2 > 0:
        raise ConfigurationError("relaxation Newton updates need temperature nudging (mu2 > 0)")


def rni_ra_pr_update(grid: RBCGrid, truth_obs: RBCFields, nudged: RBCFields, params_proxy: RBCParams,
                     nudge: RBCNudge) -> tuple[float, float]:
    """Returns ``(Ra', 1/Pr')`` for the split form.

    ``Ra' = Ra - mu1 |z|^2 / <theta_x, z>`` and
    ``(1/Pr)' = 1/Pr - mu2 |eta|^2 / <eta, Lap theta>``.
    """
    _require_temperature_nudging(nudge)
    zt, tt, zn, tn, z, eta = _errors(grid, truth_obs, nudged, nudge.n_obs)
    d_ra = _ratio(grid, nudge.mu1 * grid.norm_sq(z), grid.dx_(tt), z, "ra")
    d_ip = _ratio(grid, nudge.mu2 * grid.norm_sq(eta), eta, grid.laplacian(tt), "inv-pr")
    return params_proxy.Ra - d_ra, params_proxy.inv_pr - d_ip


def rni_plus_ra_pr_update(grid: RBCGrid, truth_obs: RBCFields, nudged: RBCFields, params_proxy: RBCParams,
                          nudge: RBCNudge, corrections: bool = True) -> tuple[float, float]:
    """Refined update keeping the dropped terms, evaluated on observed modes.

    Numerators are ``<z, u~.grad z + w.grad zeta - Lap z - Ra~ eta_x + mu1 z>``
    and ``<eta, u~.grad eta + w.grad theta - w_z - (1/Pr~) Lap eta + mu2 eta>``,
    where ``w`` is the velocity error, ``w_z`` its vertical component and all
    products use observed projections.  ``corrections=False`` keeps only the
    nudging terms, which is the plain update.
    """
    _require_temperature_nudging(nudge)
    n = nudge.n_obs
    zt, tt, zn, tn, z, eta = _errors(grid, truth_obs, nudged, n)
    P = lambda c: galerkin_project(grid, c, n)  # noqa: E731
    az = nudge.mu1 * z
    at = nudge.mu2 * eta
    if corrections:
        az = az + P(transport(grid, zn, z) + transport(grid, z, zt)) - grid.laplacian(z) \
            - params_proxy.Ra * grid.dx_(eta)
        w_err = -1j * grid.kx * (z / grid.k2)
        at = at + P(transport(grid, zn, eta) + transport(grid, z, tt)) - w_err \
            - params_proxy.inv_pr * grid.laplacian(eta)
    d_ra = _ratio(grid, grid.inner(z, az), grid.dx_(tt), z, "ra")
    d_ip = _ratio(grid, grid.inner(eta, at), eta, grid.laplacian(tt), "inv-pr")
    return params_proxy.Ra - d_ra, params_proxy.inv_pr - d_ip


@dataclass(frozen=True)
class RLSSystem:
    A: np.ndarray
    b: np.ndarray

    @property
    def det_rel(self) -> float:
        scale = self.A[0, 0] * self.A[1, 1]
        return float(np.linalg.det(self.A) / scale) if scale > 0 else 0.0


def rls_assemble_rbc(grid: RBCGrid, nudged: RBCFields, dzeta_obs_dt, n_obs: int) -> RLSSystem:
    """2x2 normal equations for ``(Pr, Pr Ra)`` in the Pr-outside form."""
    P = lambda c: galerkin_project(grid, c, n_obs)  # noqa: E731
    g1 = P(grid.laplacian(nudged.zeta))
    g2 = P(grid.dx_(nudged.theta))
    r = P(transport(grid, nudged.zeta, nudged.zeta) * grid.dealias) + P(dzeta_obs_dt)
    A = np.array([[grid.norm_sq(g1), grid.inner(g2, g1)],
                  [grid.inner(g1, g2), grid.norm_sq(g2)]])
    b = np.array([grid.inner(r, g1), grid.inner(r, g2)])
    return RLSSystem(A, b)


def rls_pr_ra_update(grid: RBCGrid, nudged: RBCFields, dzeta_obs_dt, nudge: RBCNudge) -> tuple[float, float]:
    """Returns ``(Pr', Ra')`` from the least-squares fit of the observed vorticity tendency."""
    system = rls_assemble_rbc(grid, nudged, dzeta_obs_dt, nudge.n_obs)
    if not system.det_rel > DET_THRESHOLD:
        raise DegenerateUpdate(f"RLS matrix singular (relative det {system.det_rel:.3g})", reason="rbc-rls-det")
    x = np.linalg.solve(system.A, system.b)
    if abs(x[0]) < PR_FLOOR:
        raise DegenerateUpdate(f"recovered Prandtl number {x[0]:.3g} too close to zero", reason="rbc-rls-pr")
    return float(x[0]), float(x[1] / x[0])
