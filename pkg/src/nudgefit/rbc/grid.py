"""Fourier x sine spectral grid for a free-slip convection cell.

Fields that vanish on the plates (vorticity, streamfunction, temperature
deviation, vertical velocity) are expanded as

    f(x, z) = sum_{n, m} f_nm exp(i k_n x) sin(m pi z / Lz) / Nx,

with ``n = 0 .. Nx/2`` (real FFT layout) and ``m = 1 .. Nz-1``.  Their z
derivatives (horizontal velocity, ``zeta_z``, ``theta_z``) are cosine series
with the same coefficient layout.  Physical samples live at
``x_i = i Lx / Nx`` and the interior points ``z_j = j Lz / Nz``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from ..errors import ConfigurationError

__all__ = ["RBCGrid", "galerkin_project"]


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class RBCGrid:
    Nx: int = 128
    Nz: int = 64
    Lx: float = 4.0
    Lz: float = 1.0
    kx: np.ndarray = field(init=False, repr=False, compare=False)
    kz: np.ndarray = field(init=False, repr=False, compare=False)
    k2: np.ndarray = field(init=False, repr=False, compare=False)
    dealias: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (_is_pow2(self.Nx) and _is_pow2(self.Nz)):
            raise ConfigurationError(f"Nx and Nz must be powers of two, got {self.Nx}x{self.Nz}")
        if self.Nx < 2 * self.Nz:
            raise ConfigurationError("need Nx >= 2 Nz")
        if self.Lx <= 0 or self.Lz <= 0:
            raise ConfigurationError("domain extents must be positive")
        n = np.arange(self.Nx // 2 + 1)
        m = np.arange(1, self.Nz)
        kx = (2 * np.pi * n / self.Lx)[:, None]
        kz = (np.pi * m / self.Lz)[None, :]
        keep = (n[:, None] < self.Nx / 3) & (m[None, :] < 2 * self.Nz / 3)
        # real-FFT bins other than the mean and Nyquist stand for a +/- pair
        w = np.full(n.size, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        for name, value in (("kx", kx), ("kz", kz), ("k2", kx ** 2 + kz ** 2),
                            ("dealias", keep), ("weights", w[:, None])):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def shape(self) -> tuple[int, int]:
        """Spectral coefficient shape."""
        return (self.Nx // 2 + 1, self.Nz - 1)

    @property
    def physical_shape(self) -> tuple[int, int]:
        return (self.Nx, self.Nz - 1)

    @property
    def dx(self) -> float:
        return self.Lx / self.Nx

    @property
    def dz(self) -> float:
        return self.Lz / self.Nz

    def coords(self):
        x = np.arange(self.Nx) * self.dx
        z = np.arange(1, self.Nz) * self.dz
        return x, z

    def zeros(self, *lead) -> np.ndarray:
        return np.zeros(tuple(lead) + self.shape, dtype=complex)

    # transforms; all act on the last two axes so stacked fields batch
    def to_physical_sine(self, c) -> np.ndarray:
        f = sfft.irfft(c, n=self.Nx, axis=-2)
        return sfft.dst(f, type=1, axis=-1) * 0.5

    def to_physical_cosine(self, c) -> np.ndarray:
        f = sfft.irfft(c, n=self.Nx, axis=-2)
        pad = [(0, 0)] * (f.ndim - 1) + [(1, 1)]
        g = sfft.dct(np.pad(f * 0.5, pad), type=1, axis=-1)
        return g[..., 1:-1]

    def to_spectral_sine(self, f) -> np.ndarray:
        s = sfft.dst(np.asarray(f, dtype=float), type=1, axis=-1) / self.Nz
        return sfft.rfft(s, axis=-2)

    def mode(self, n: int, m: int, amplitude: complex = 1.0) -> np.ndarray:
        """Coefficients of ``amplitude * cos(k_n x) sin(m pi z / Lz)`` for real amplitude."""
        c = self.zeros()
        if not (0 <= n <= self.Nx // 2 and 1 <= m <= self.Nz - 1):
            raise ConfigurationError(f"mode ({n}, {m}) outside the grid")
        c[n, m - 1] = amplitude * (self.Nx if n in (0, self.Nx // 2) else self.Nx / 2)
        return c

    def inner(self, f, g) -> float:
        """L2 inner product over the cell of two sine-type fields."""
        s = np.sum(self.weights * (f * np.conj(g)).real, axis=(-2, -1))
        return s * (self.Lx / self.Nx ** 2) * (self.Lz / 2)

    def norm_sq(self, f) -> float:
        return self.inner(f, f)

    def dx_(self, c) -> np.ndarray:
        return 1j * self.kx * c

    def laplacian(self, c) -> np.ndarray:
        return -self.k2 * c


def galerkin_project(grid: RBCGrid, c, n_obs: int) -> np.ndarray:
    """Zero every coefficient with horizontal index > n_obs or vertical index > n_obs."""
    if n_obs < 1:
        raise ConfigurationError("N_obs must be >= 1")
    out = np.array(c, copy=True)
    out[..., n_obs + 1:, :] = 0
    out[..., :, n_obs:] = 0
    return out
