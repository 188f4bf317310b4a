"""Cell-centered rectangular grid with homogeneous Neumann closure.

Fields are plain ``float64`` arrays of shape ``(nx, ny)``; index ``[i, j]``
holds the value at the cell center ``((i + 1/2) hx, (j + 1/2) hy)``.
Time-indexed fields stack these along a leading axis of length ``nt + 1``.

The 5-point Laplacian with mirrored ghost cells is diagonalized by the
orthonormal DCT-II, which is what makes the inverse Neumann Laplacian ``N``
and every constant-coefficient implicit solve a single diagonal division.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft

from . import kernels


class NonZeroMean(ValueError):
    """Raised when ``N`` is applied to a field whose mean is not zero."""


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs nx, ny >= 2, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain lengths must be positive")

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def hx(self):
        return self.lx / self.nx

    @property
    def hy(self):
        return self.ly / self.ny

    @property
    def cell_area(self):
        return self.hx * self.hy

    @property
    def area(self):
        return self.lx * self.ly

    @cached_property
    def centers(self):
        """Cell-center coordinate arrays ``(X, Y)`` of shape ``(nx, ny)``."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    @cached_property
    def symbol(self):
        """Eigenvalues of ``-Δ_h`` in DCT-II ordering (entry ``[0, 0]`` is 0)."""
        kx = np.arange(self.nx)
        ky = np.arange(self.ny)
        lam_x = (2.0 / self.hx**2) * (1.0 - np.cos(np.pi * kx / self.nx))
        lam_y = (2.0 / self.hy**2) * (1.0 - np.cos(np.pi * ky / self.ny))
        lam = lam_x[:, None] + lam_y[None, :]
        lam.setflags(write=False)
        return lam

    @property
    def laplacian_norm(self):
        """Spectral radius of ``Δ_h`` (used for rounding floors)."""
        return float(self.symbol.max())

    # ---- inner products ----------------------------------------------------

    def inner(self, a, b):
        return float(np.sum(a * b) * self.cell_area)

    def l2_norm(self, a):
        return float(np.sqrt(np.sum(a * a) * self.cell_area))

    def zeros(self):
        return np.zeros(self.shape)


@dataclass(frozen=True)
class TimeGrid:
    t_final: float
    nt: int

    def __post_init__(self):
        if self.nt < 1:
            raise ValueError("nt must be >= 1")
        if not self.t_final > 0:
            raise ValueError("t_final must be positive")

    @property
    def dt(self):
        return self.t_final / self.nt

    @property
    def times(self):
        return np.linspace(0.0, self.t_final, self.nt + 1)

    @property
    def weights(self):
        """Composite trapezoid weights on the nodes."""
        w = np.full(self.nt + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


# --------------------------------------------------------------------------
# spatial operators
# --------------------------------------------------------------------------


def laplacian_neumann(grid, field):
    return kernels.laplacian(field, grid.hx, grid.hy)


def mean_value(grid, field):
    return float(np.sum(field) * grid.cell_area / grid.area)


def dct(field):
    return scipy.fft.dctn(field, type=2, norm="ortho")


def idct(coef):
    return scipy.fft.idctn(coef, type=2, norm="ortho")


def spectral_solve(grid, rhs, diag):
    """Solve ``op z = rhs`` for an operator diagonal in the DCT basis."""
    return idct(dct(rhs) / diag)


def zero_mean_tolerance(field):
    return 1e-10 * max(float(np.max(np.abs(field))), 1e-300)


def inv_neumann_laplacian(grid, psi, tol=None):
    """Zero-mean solution ``z`` of ``-Δ_h z = psi``.

    Raises :class:`NonZeroMean` if ``psi`` is not (numerically) mean free.
    """
    m = mean_value(grid, psi)
    tol = zero_mean_tolerance(psi) if tol is None else tol
    if abs(m) > tol:
        raise NonZeroMean(f"mean {m:.3e} exceeds tolerance {tol:.3e}; subtract it first")
    coef = dct(psi)
    lam = grid.symbol
    out = np.zeros_like(coef)
    out[lam > 0] = coef[lam > 0] / lam[lam > 0]
    return idct(out)


def grad_norm_sq(grid, z):
    """``‖∇z‖²`` with staggered face differences over interior faces.

    Summation by parts makes this equal to ``⟨z, -Δ_h z⟩`` exactly.
    """
    dx = np.diff(z, axis=0) / grid.hx
    dy = np.diff(z, axis=1) / grid.hy
    return float((np.sum(dx * dx) + np.sum(dy * dy)) * grid.cell_area)


def h1_norm(grid, z):
    return float(np.sqrt(grid.l2_norm(z) ** 2 + grad_norm_sq(grid, z)))


def dual_norm(grid, psi):
    m = mean_value(grid, psi)
    centered = psi - m
    z = inv_neumann_laplacian(grid, centered, tol=np.inf)
    return float(np.sqrt(grad_norm_sq(grid, z) + m * m))


# --------------------------------------------------------------------------
# time convolutions (composite trapezoid)
# --------------------------------------------------------------------------


def _check_series(series, timegrid):
    series = np.asarray(series, dtype=float)
    if timegrid is not None and series.shape[0] != timegrid.nt + 1:
        raise ValueError(
            f"series has {series.shape[0]} time levels, time grid expects {timegrid.nt + 1}"
        )
    return series


def convolve_forward(series, dt, timegrid=None):
    """``(1*v)(t_n) = ∫_0^{t_n} v``; the value at ``t_0`` is exactly zero."""
    v = _check_series(series, timegrid)
    out = np.zeros_like(v)
    if v.shape[0] > 1:
        out[1:] = np.cumsum(0.5 * dt * (v[1:] + v[:-1]), axis=0)
    return out


def convolve_backward(series, dt, timegrid=None):
    """``(1⊛v)(t_n) = ∫_{t_n}^T v``; the value at ``T`` is exactly zero."""
    v = _check_series(series, timegrid)
    out = np.zeros_like(v)
    if v.shape[0] > 1:
        seg = 0.5 * dt * (v[1:] + v[:-1])
        out[:-1] = np.cumsum(seg[::-1], axis=0)[::-1]
    return out


def time_integral(series, timegrid):
    """Trapezoid-in-time integral of a per-node scalar or field series."""
    w = timegrid.weights
    return np.tensordot(w, np.asarray(series, dtype=float), axes=(0, 0))
