"""Vorticity-streamfunction Boussinesq convection with optional nudging.

Conventions: ``Delta psi = -zeta``, ``u = psi_z``, ``w = -psi_x``.  The
temperature ``theta`` is the deviation from the linear conductive profile,
which contributes ``+w`` to its tendency.  Walls are free-slip with fixed
temperature so every evolved field is a sine series in z.

Two forms are supported:

* ``pr-outside``: ``zeta_t = -u.grad zeta + Pr Lap zeta + Pr Ra theta_x``,
  ``theta_t = -u.grad theta + w + Lap theta``;
* ``pr-split``: ``zeta_t = -u.grad zeta + Lap zeta + Ra theta_x``,
  ``theta_t = -u.grad theta + w + Lap theta / Pr``.

Time stepping is Crank-Nicolson on diffusion and variable-step
Adams-Bashforth 2 on everything else.  Several members (truth and nudged
copy) are stacked along a leading axis so transforms run batched.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import CFLViolation, ConfigurationError, IntegrationBlowup
from .grid import RBCGrid, galerkin_project

__all__ = [
    "FORMS",
    "RBCParams",
    "RBCFields",
    "RBCNudge",
    "Velocities",
    "streamfunction_solve",
    "rhs_rbc",
    "cfl_number",
    "imex_step",
    "RBCStepper",
    "random_perturbation",
    "spinup",
    "kinetic_energy",
]

log = logging.getLogger(__name__)

FORMS = ("pr-outside", "pr-split")
CFL_LIMIT = 0.5


@dataclass(frozen=True)
class RBCParams:
    Ra: float = 1e5
    Pr: float = 1.0
    form: str = "pr-split"

    def __post_init__(self):
        if not (self.Ra > 0 and self.Pr > 0 and np.isfinite(self.Ra) and np.isfinite(self.Pr)):
            raise ConfigurationError(f"Ra and Pr must be finite and positive, got Ra={self.Ra}, Pr={self.Pr}")
        if self.form not in FORMS:
            raise ConfigurationError(f"unknown form {self.form!r}; expected one of {FORMS}")

    @property
    def inv_pr(self) -> float:
        return 1.0 / self.Pr

    @property
    def coefficients(self) -> tuple[float, float, float]:
        """(vorticity diffusivity, temperature diffusivity, buoyancy factor)."""
        if self.form == "pr-outside":
            return self.Pr, 1.0, self.Pr * self.Ra
        return 1.0, 1.0 / self.Pr, self.Ra


@dataclass
class RBCFields:
    """Spectral vorticity and temperature deviation on a grid."""

    grid: RBCGrid
    zeta: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        for name in ("zeta", "theta"):
            a = np.asarray(getattr(self, name), dtype=complex)
            if a.shape != self.grid.shape:
                raise ConfigurationError(f"{name} has shape {a.shape}, grid expects {self.grid.shape}")
            setattr(self, name, a)

    @classmethod
    def zeros(cls, grid: RBCGrid) -> "RBCFields":
        return cls(grid, grid.zeros(), grid.zeros())

    def copy(self) -> "RBCFields":
        return RBCFields(self.grid, self.zeta.copy(), self.theta.copy())

    @property
    def psi(self) -> np.ndarray:
        return streamfunction_solve(self.grid, self.zeta).psi

    def velocities(self) -> "Velocities":
        return streamfunction_solve(self.grid, self.zeta)


@dataclass(frozen=True)
class RBCNudge:
    mu1: float = 8000.0
    mu2: float = 8000.0
    n_obs: int = 16

    def __post_init__(self):
        if not self.mu1 > 0:
            raise ConfigurationError("mu1 must be positive")
        if self.mu2 < 0:
            raise ConfigurationError("mu2 must be nonnegative")
        if self.n_obs < 1:
            raise ConfigurationError("N_obs must be >= 1")

    def capped(self, dt: float, limit: float = CFL_LIMIT) -> "RBCNudge":
        """Gains reduced so that ``mu * dt`` stays inside the explicit stability limit."""
        cap = limit / dt
        return replace(self, mu1=min(self.mu1, cap), mu2=min(self.mu2, cap))


@dataclass(frozen=True)
class Velocities:
    """Streamfunction (sine coefficients), ``u`` (cosine) and ``w`` (sine)."""

    psi: np.ndarray
    u: np.ndarray
    w: np.ndarray


def streamfunction_solve(grid: RBCGrid, zeta) -> Velocities:
    psi = np.asarray(zeta) / grid.k2
    return Velocities(psi=psi, u=grid.kz * psi, w=-1j * grid.kx * psi)


def _advection(grid: RBCGrid, zeta, theta):
    """Dealiased ``u.grad zeta`` and ``u.grad theta`` plus physical velocity maxima.

    Inputs may carry leading batch axes.
    """
    psi = zeta / grid.k2
    ikx = 1j * grid.kx
    sine = grid.to_physical_sine(np.stack([-ikx * psi, ikx * zeta, ikx * theta]))
    cosine = grid.to_physical_cosine(np.stack([grid.kz * psi, grid.kz * zeta, grid.kz * theta]))
    w, zx, tx = sine
    u, zz, tz = cosine
    prod = np.stack([u * zx + w * zz, u * tx + w * tz])
    adv = grid.to_spectral_sine(prod) * grid.dealias
    axes = (-2, -1)
    return adv[0], adv[1], np.abs(u).max(axis=axes), np.abs(w).max(axis=axes)


def cfl_number(grid: RBCGrid, umax, wmax, dt: float):
    return dt * (np.asarray(umax) / grid.dx + np.asarray(wmax) / grid.dz)


def _check_finite(arrays, t):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise IntegrationBlowup("non-finite field in convection solver", t=t)


def _explicit(grid, coeffs, zeta, theta, nudge=None, n_obs=4, t=0.0):
    """Explicit tendencies for stacked members.

    ``coeffs`` has shape (B, 3) with (nu_zeta, nu_theta, buoyancy) per member.
    ``nudge`` is ``None`` or a tuple ``(mu1, mu2, zeta_obs, theta_obs, members)``
    relaxing the listed members toward the observations.
    """
    adv_z, adv_t, umax, wmax = _advection(grid, zeta, theta)
    buoy = coeffs[:, 2][:, None, None]
    ikx = 1j * grid.kx
    ez = -adv_z + buoy * ikx * theta
    et = -adv_t - ikx * (zeta / grid.k2)
    if nudge is not None:
        mu1, mu2, zobs, tobs, members = nudge
        for b in members:
            ez[b] -= mu1 * galerkin_project(grid, zeta[b] - zobs, n_obs)
            if mu2 > 0:
                et[b] -= mu2 * galerkin_project(grid, theta[b] - tobs, n_obs)
    _check_finite((ez, et), t)
    return ez, et, umax, wmax


def rhs_rbc(grid: RBCGrid, params: RBCParams, fields: RBCFields, nudge: RBCNudge | None = None,
            observed_truth: RBCFields | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Full spectral tendencies ``(zeta_t, theta_t)``.

    Nudging is added when both ``nudge`` and ``observed_truth`` are given;
    the observations are projected onto the low modes here.
    """
    nu_z, nu_t, buoy = params.coefficients
    coeffs = np.array([[nu_z, nu_t, buoy]])
    extra = None
    if nudge is not None and observed_truth is not None:
        extra = (nudge.mu1, nudge.mu2, galerkin_project(grid, observed_truth.zeta, nudge.n_obs),
                 galerkin_project(grid, observed_truth.theta, nudge.n_obs), (0,))
    n_obs = nudge.n_obs if nudge is not None else 1
    ez, et, _, _ = _explicit(grid, coeffs, fields.zeta[None], fields.theta[None], extra, n_obs)
    return ez[0] - nu_z * grid.k2 * fields.zeta, et[0] - nu_t * grid.k2 * fields.theta


@dataclass
class RBCStepper:
    """IMEX CN/AB2 integrator for a stack of members.

    Member 0 is the truth when nudging is on; members listed in
    ``nudged_members`` relax toward its low modes.  Parameters of any member
    may be changed between steps (the estimators do this).
    """

    grid: RBCGrid
    params: list
    zeta: np.ndarray
    theta: np.ndarray
    nudge: RBCNudge | None = None
    nudged_members: tuple = (1,)
    t: float = 0.0
    check_cfl: bool = True
    _prev: tuple | None = field(default=None, repr=False)
    _prev_dt: float = field(default=0.0, repr=False)
    last_cfl: float = field(default=0.0, repr=False)

    def __post_init__(self):
        self.zeta = np.array(self.zeta, dtype=complex)
        self.theta = np.array(self.theta, dtype=complex)
        B = len(self.params)
        if self.zeta.shape != (B,) + self.grid.shape or self.theta.shape != self.zeta.shape:
            raise ConfigurationError("stacked fields must have shape (members,) + grid.shape")
        forms = {p.form for p in self.params}
        if len(forms) != 1:
            raise ConfigurationError("all members must share the same equation form")
        self.zeta *= self.grid.dealias
        self.theta *= self.grid.dealias

    @classmethod
    def single(cls, grid, params: RBCParams, fields: RBCFields, t: float = 0.0) -> "RBCStepper":
        return cls(grid, [params], fields.zeta[None], fields.theta[None], t=t)

    def member(self, b: int) -> RBCFields:
        return RBCFields(self.grid, self.zeta[b].copy(), self.theta[b].copy())

    def reset_history(self):
        """Forget the previous explicit tendency (next step is first order)."""
        self._prev = None

    def _coeffs(self):
        return np.array([p.coefficients for p in self.params])

    def _nudge_terms(self):
        if self.nudge is None:
            return None
        g, n = self.grid, self.nudge.n_obs
        return (self.nudge.mu1, self.nudge.mu2, galerkin_project(g, self.zeta[0], n),
                galerkin_project(g, self.theta[0], n), self.nudged_members)

    def explicit(self):
        coeffs = self._coeffs()
        n_obs = self.nudge.n_obs if self.nudge is not None else 1
        return _explicit(self.grid, coeffs, self.zeta, self.theta, self._nudge_terms(), n_obs, self.t)

    def step(self, dt: float, explicit=None):
        """Advance by ``dt``; raises :class:`CFLViolation` before touching the state."""
        if not dt > 0:
            raise ConfigurationError("dt must be positive")
        ez, et, umax, wmax = explicit if explicit is not None else self.explicit()
        cfl = float(np.max(cfl_number(self.grid, umax, wmax, dt)))
        self.last_cfl = cfl
        if self.check_cfl and cfl > CFL_LIMIT:
            advisory = 0.8 * CFL_LIMIT * dt / cfl
            raise CFLViolation(f"CFL number {cfl:.3g} > {CFL_LIMIT} at t={self.t:.6g}; try dt <= {advisory:.3g}",
                               t=self.t, advisory_dt=advisory)
        if self._prev is None:
            nz, nt = ez, et
        else:
            r = dt / self._prev_dt
            a, b = 1.0 + 0.5 * r, 0.5 * r
            nz = a * ez - b * self._prev[0]
            nt = a * et - b * self._prev[1]
        coeffs = self._coeffs()
        k2 = self.grid.k2
        half = 0.5 * dt
        for arr, n_exp, nu in ((self.zeta, nz, coeffs[:, 0]), (self.theta, nt, coeffs[:, 1])):
            nu = nu[:, None, None]
            arr[...] = ((1.0 - half * nu * k2) * arr + dt * n_exp) / (1.0 + half * nu * k2)
        self._prev = (ez, et)
        self._prev_dt = dt
        self.t += dt
        _check_finite((self.zeta, self.theta), self.t)

    def max_stable_dt(self, cfl_target: float = 0.35) -> float:
        _, _, umax, wmax = _advection(self.grid, self.zeta, self.theta)
        rate = float(np.max(umax / self.grid.dx + wmax / self.grid.dz))
        return np.inf if rate == 0 else cfl_target / rate


def imex_step(grid: RBCGrid, params: RBCParams, fields: RBCFields, dt: float) -> RBCFields:
    """One first-step (Euler/CN) IMEX step of a single unnudged system.

    Multi-step AB2 needs history; use :class:`RBCStepper` for runs.
    """
    s = RBCStepper.single(grid, params, fields)
    s.step(dt)
    return s.member(0)


def random_perturbation(grid: RBCGrid, seed: int, amplitude: float = 1e-2, n_modes: int = 8) -> RBCFields:
    """Small seeded temperature perturbation in the lowest modes."""
    rng = np.random.default_rng(seed)
    theta = grid.zeros()
    nn, mm = min(n_modes, grid.shape[0]), min(n_modes, grid.shape[1])
    block = rng.standard_normal((nn, mm)) + 1j * rng.standard_normal((nn, mm))
    block[0, :] = block[0, :].real
    theta[:nn, :mm] = amplitude * grid.Nx * block
    return RBCFields(grid, grid.zeros(), theta * grid.dealias)


def spinup(grid: RBCGrid, params: RBCParams, t_span, seed: int = 0, dt_max: float = 1e-3,
           cfl_target: float = 0.35, initial: RBCFields | None = None) -> RBCFields:
    """Integrate from a seeded perturbation of the conductive state to ``t_span[1]``.

    The step size adapts to the flow (CFL-limited, capped by ``dt_max``).
    """
    t0, t1 = map(float, t_span)
    if t1 < t0:
        raise ConfigurationError("spinup end precedes start")
    fields = initial if initial is not None else random_perturbation(grid, seed)
    s = RBCStepper.single(grid, params, fields, t=t0)
    while s.t < t1 - 1e-12 * max(1.0, abs(t1)):
        ex = s.explicit()
        rate = float(np.max(ex[2] / grid.dx + ex[3] / grid.dz))
        dt = dt_max if rate == 0 else min(dt_max, cfl_target / rate)
        dt = min(dt, t1 - s.t)
        s.step(dt, explicit=ex)
    return s.member(0)


def kinetic_energy(grid: RBCGrid, fields: RBCFields) -> float:
    """0.5 * integral of |u|^2 = 0.5 <psi, zeta>."""
    v = fields.velocities()
    return 0.5 * grid.inner(v.psi, fields.zeta)
