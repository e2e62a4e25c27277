"""Periodic 2D grid, Fourier transforms and spectral linear operators.

Fields are plain ``float64`` arrays of shape ``(nx, ny)``; C order gives the
row-major node index ``i * ny + j`` for node ``(x_i, y_j)``.  Every linear
operator here is a real, even Fourier multiplier (a polynomial in the
Laplacian eigenvalue ``lam``), so each one is self-adjoint and commutes with
the others.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidGridError, InvalidModelError, ShapeMismatchError, SingularResolventError

MAX_POLY_DEGREE = 4
RESOLVENT_FLOOR = 1e-14


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on ``[-lx/2, lx/2) x [-ly/2, ly/2)``."""

    nx: int
    ny: int
    lx: float
    ly: float

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @cached_property
    def kx(self) -> np.ndarray:
        return _wavenumbers(self.nx, self.lx)

    @cached_property
    def ky(self) -> np.ndarray:
        return _wavenumbers(self.ny, self.ly)

    @cached_property
    def lam(self) -> np.ndarray:
        """Laplacian eigenvalue per mode of the full complex spectrum."""
        return -(self.kx[:, None] ** 2 + self.ky[None, :] ** 2)

    @cached_property
    def lam_half(self) -> np.ndarray:
        """``lam`` restricted to the ``rfft2`` half spectrum."""
        return np.ascontiguousarray(self.lam[:, : self.ny // 2 + 1])

    @cached_property
    def x(self) -> np.ndarray:
        return -0.5 * self.lx + self.hx * np.arange(self.nx)

    @cached_property
    def y(self) -> np.ndarray:
        return -0.5 * self.ly + self.hy * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def check_field(self, f: np.ndarray, name: str = "field") -> np.ndarray:
        f = np.asarray(f)
        if f.shape != self.shape:
            raise ShapeMismatchError(f"{name} has shape {f.shape}, grid is {self.shape}")
        return f


def _wavenumbers(n: int, length: float) -> np.ndarray:
    # FFT ordering 0, 1, ..., n/2, -n/2+1, ..., -1 (Nyquist kept positive)
    m = np.concatenate([np.arange(0, n // 2 + 1), np.arange(-n // 2 + 1, 0)])
    return 2.0 * np.pi * m / length


def make_grid(nx: int, ny: int, lx: float = 2.0, ly: float = 2.0) -> GridSpec:
    for name, n in (("nx", nx), ("ny", ny)):
        if int(n) != n or n < 2 or n % 2:
            raise InvalidGridError(f"{name} must be an even integer >= 2, got {n}")
    for name, length in (("lx", lx), ("ly", ly)):
        if not (np.isfinite(length) and length > 0):
            raise InvalidGridError(f"{name} must be positive, got {length}")
    return GridSpec(int(nx), int(ny), float(lx), float(ly))


def fft2(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    """Full complex forward transform (no normalization)."""
    return np.fft.fft2(grid.check_field(f))


def ifft2(grid: GridSpec, coeffs: np.ndarray) -> np.ndarray:
    """Inverse transform (divides by ``nx * ny``), truncated to the real part."""
    coeffs = np.asarray(coeffs)
    if coeffs.shape != grid.shape:
        raise ShapeMismatchError(f"coefficients have shape {coeffs.shape}, grid is {grid.shape}")
    return np.fft.ifft2(coeffs).real


def apply_multiplier(grid: GridSpec, f: np.ndarray, mult: np.ndarray) -> np.ndarray:
    """Apply a real even multiplier given on the half spectrum."""
    return np.fft.irfft2(mult * np.fft.rfft2(f), s=grid.shape)


def _check_poly(p: Sequence[float]) -> tuple[float, ...]:
    p = tuple(float(c) for c in p)
    if not p:
        raise InvalidModelError("empty polynomial")
    if len(p) - 1 > MAX_POLY_DEGREE:
        raise InvalidModelError(f"polynomial degree {len(p) - 1} exceeds {MAX_POLY_DEGREE}")
    return p


def poly_multiplier(lam: np.ndarray, p: Sequence[float]) -> np.ndarray:
    """``sum_m p[m] * lam**m`` evaluated by Horner's rule."""
    p = _check_poly(p)
    out = np.full_like(lam, p[-1])
    for c in reversed(p[:-1]):
        out = out * lam + c
    return out


def apply_operator_poly(grid: GridSpec, f: np.ndarray, p: Sequence[float]) -> np.ndarray:
    f = grid.check_field(f)
    return apply_multiplier(grid, f, poly_multiplier(grid.lam_half, p))


def apply_mobility(grid: GridSpec, f: np.ndarray, mob) -> np.ndarray:
    """``-M f`` for Allen-Cahn, ``M lap_h f`` for Cahn-Hilliard."""
    f = grid.check_field(f)
    if mob.kind == "ac":
        return -mob.M * f
    return apply_multiplier(grid, f, mob.multiplier(grid.lam_half))


def resolvent_denominator(lam, delta, mob, c_poly, lg_poly) -> np.ndarray:
    """``D(lam) = 1 - delta * g(lam) * (c(lam) + lg(lam))``."""
    return 1.0 - delta * mob.multiplier(lam) * (poly_multiplier(lam, c_poly) + poly_multiplier(lam, lg_poly))


def check_denominator(grid: GridSpec, denom: np.ndarray) -> None:
    bad = np.abs(denom) < RESOLVENT_FLOOR
    if bad.any():
        j, k = np.argwhere(bad)[0]
        raise SingularResolventError((int(j), int(k)), complex(denom[j, k]))


def solve_resolvent(grid: GridSpec, rhs: np.ndarray, delta: float, mob, c_poly, lg_poly) -> np.ndarray:
    """Apply ``(1 - delta * mob * (c_poly + lg_poly))^{-1}`` to ``rhs`` (all multipliers)."""
    rhs = grid.check_field(rhs)
    denom = resolvent_denominator(grid.lam_half, delta, mob, c_poly, lg_poly)
    check_denominator(grid, denom)
    return apply_multiplier(grid, rhs, 1.0 / denom)
