"""Phase-field model definitions: bulk potentials, mobilities, diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grid as _grid
from .errors import InvalidModelError, UnsupportedDiagnosticError
from .grid import GridSpec, poly_multiplier
from .mlp import MlpParams, mlp_derivative, mlp_forward

FH_CLAMP = 1e-12


class DoubleWell:
    """``F = (1 - phi^2)^2 / 4``, ``f = phi^3 - phi``."""

    name = "double-well"

    def __call__(self, phi):
        return phi**3 - phi

    def derivative(self, phi):
        return 3.0 * phi**2 - 1.0

    def primitive(self, phi):
        return 0.25 * (1.0 - phi**2) ** 2

    def __repr__(self):
        return "DoubleWell()"


class FloryHuggins:
    """Logarithmic potential with chemical potential ``ln p - ln(1-p)/2 + 1.5 - 2p``.

    Inputs are clamped to ``[1e-12, 1 - 1e-12]`` so values stay finite.  The
    primitive is ``p ln p + (1-p) ln(1-p)/2 + 2p(1-p)``; its derivative is *not*
    the chemical potential above, so the energy is a monitor only.
    """

    name = "flory-huggins"

    @staticmethod
    def _clamp(phi):
        return np.clip(phi, FH_CLAMP, 1.0 - FH_CLAMP)

    def __call__(self, phi):
        p = self._clamp(phi)
        return np.log(p) - 0.5 * np.log(1.0 - p) + 1.5 - 2.0 * p

    def derivative(self, phi):
        p = self._clamp(phi)
        inside = (phi > FH_CLAMP) & (phi < 1.0 - FH_CLAMP)
        return np.where(inside, 1.0 / p + 0.5 / (1.0 - p) - 2.0, 0.0)

    def primitive(self, phi):
        p = self._clamp(phi)
        return p * np.log(p) + 0.5 * (1.0 - p) * np.log(1.0 - p) + 2.0 * p * (1.0 - p)

    def __repr__(self):
        return "FloryHuggins()"


class ZeroBulk:
    """The zero map; default for the known pointwise term ``ng``."""

    name = "zero"

    def __call__(self, phi):
        return np.zeros_like(np.asarray(phi, dtype=np.float64))

    derivative = __call__
    primitive = __call__

    def __repr__(self):
        return "ZeroBulk()"


@dataclass
class Learned:
    """Bulk chemical potential given by a network."""

    params: MlpParams
    name = "learned"

    def __call__(self, phi):
        return mlp_forward(self.params, phi)

    def derivative(self, phi):
        return mlp_derivative(self.params, phi)

    def primitive(self, phi):
        raise UnsupportedDiagnosticError("the free energy is undefined for a learned bulk function")


BULK_BY_NAME = {"double-well": DoubleWell, "flory-huggins": FloryHuggins, "zero": ZeroBulk}


def bulk_eval(bulk, phi: float) -> float:
    return float(bulk(np.float64(phi)))


def bulk_eval_field(bulk, phi: np.ndarray) -> np.ndarray:
    return np.asarray(bulk(np.asarray(phi, dtype=np.float64)), dtype=np.float64)


@dataclass(frozen=True)
class MobilityKind:
    kind: str  # "ac" or "ch"
    M: float

    def __post_init__(self):
        if self.kind not in ("ac", "ch"):
            raise InvalidModelError(f"mobility kind must be 'ac' or 'ch', got {self.kind!r}")
        if not (np.isfinite(self.M) and self.M > 0):
            raise InvalidModelError(f"mobility constant must be positive, got {self.M}")

    def multiplier(self, lam: np.ndarray) -> np.ndarray:
        if self.kind == "ac":
            return np.full_like(lam, -self.M)
        return self.M * lam


DEFAULT_STABILIZER = {"ac": (2.0,), "ch": (0.0, -2.0)}


@dataclass
class ModelSpec:
    """Everything needed to define the phase-field right-hand side.

    The chemical potential is ``lg_poly(lap) phi + ng(phi) + bulk(phi)``; the
    mobility multiplier turns it into ``dphi/dt``.

    ``stabilizer`` and ``lg_poly`` are coefficient lists of polynomials in the
    discrete Laplacian.  They default to the AC/CH stabilizers (``2`` and
    ``-2 lap``) and the linear part ``-eps^2 lap``.
    """

    eps: float
    mobility: MobilityKind
    bulk: object = field(default_factory=DoubleWell)
    stabilizer: tuple | None = None
    lg_poly: tuple | None = None
    ng: object = field(default_factory=ZeroBulk)

    def __post_init__(self):
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise InvalidModelError(f"eps must be positive, got {self.eps}")
        if self.stabilizer is None:
            self.stabilizer = DEFAULT_STABILIZER[self.mobility.kind]
        if self.lg_poly is None:
            self.lg_poly = (0.0, -self.eps**2)
        # validates degree
        self.stabilizer = tuple(float(c) for c in _grid._check_poly(self.stabilizer))
        self.lg_poly = tuple(float(c) for c in _grid._check_poly(self.lg_poly))

    def nonlinear(self, phi: np.ndarray) -> np.ndarray:
        """Pointwise part ``ng(phi) + bulk(phi)``."""
        h = self.bulk(phi)
        if not isinstance(self.ng, ZeroBulk):
            h = h + self.ng(phi)
        return h

    def nonlinear_derivative(self, phi: np.ndarray) -> np.ndarray:
        d = self.bulk.derivative(phi)
        if not isinstance(self.ng, ZeroBulk):
            d = d + self.ng.derivative(phi)
        return d

    def describe(self) -> dict:
        return {
            "eps": self.eps,
            "mobility": {"kind": self.mobility.kind, "M": self.mobility.M},
            "bulk": getattr(self.bulk, "name", repr(self.bulk)),
            "stabilizer": list(self.stabilizer),
            "lg_poly": list(self.lg_poly),
            "ng": getattr(self.ng, "name", repr(self.ng)),
        }


def allen_cahn(eps: float, M: float, bulk=None, **kw) -> ModelSpec:
    return ModelSpec(eps, MobilityKind("ac", M), DoubleWell() if bulk is None else bulk, **kw)


def cahn_hilliard(eps: float, M: float, bulk=None, **kw) -> ModelSpec:
    return ModelSpec(eps, MobilityKind("ch", M), DoubleWell() if bulk is None else bulk, **kw)


@dataclass
class SpectralParts:
    """Half-spectrum multipliers of a model on a grid.

    ``g``: mobility, ``lg``: linear part of ``g``, ``c``: stabilizer.
    """

    grid: GridSpec
    g: np.ndarray
    lg: np.ndarray
    c: np.ndarray
    ac: bool
    M: float

    @classmethod
    def build(cls, grid: GridSpec, model: ModelSpec) -> SpectralParts:
        lam = grid.lam_half
        return cls(
            grid,
            model.mobility.multiplier(lam),
            poly_multiplier(lam, model.lg_poly),
            poly_multiplier(lam, model.stabilizer),
            model.mobility.kind == "ac",
            model.mobility.M,
        )

    def rhs(self, phi: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Mobility applied to ``lg_poly(lap) phi + h`` for a precomputed pointwise part ``h``."""
        rfft2, irfft2 = np.fft.rfft2, np.fft.irfft2
        if self.ac:
            return -self.M * (irfft2(self.lg * rfft2(phi), s=self.grid.shape) + h)
        return irfft2(self.g * (self.lg * rfft2(phi) + rfft2(h)), s=self.grid.shape)

    def rhs_transpose(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split the adjoint of ``(phi, h) -> rhs`` applied to ``w``.

        Returns ``(d_phi_linear, d_h)``.
        """
        rfft2, irfft2 = np.fft.rfft2, np.fft.irfft2
        if self.ac:
            d_h = -self.M * w
            return irfft2(self.lg * rfft2(d_h), s=self.grid.shape), d_h
        d_h = irfft2(self.g * rfft2(w), s=self.grid.shape)
        return irfft2(self.lg * rfft2(d_h), s=self.grid.shape), d_h


def rhs_eval(grid: GridSpec, phi: np.ndarray, model: ModelSpec) -> np.ndarray:
    phi = grid.check_field(phi, "phi")
    return SpectralParts.build(grid, model).rhs(phi, model.nonlinear(phi))


def gradient_energy_density_sum(grid: GridSpec, phi: np.ndarray) -> float:
    """``sum_nodes |grad_h phi|^2`` computed from the spectrum (Parseval)."""
    coeffs = np.fft.fft2(phi)
    return float(np.sum(-grid.lam * np.abs(coeffs) ** 2) / (grid.nx * grid.ny))


def free_energy(grid: GridSpec, phi: np.ndarray, model: ModelSpec) -> float:
    phi = grid.check_field(phi, "phi")
    bulk_density = model.bulk.primitive(phi)
    grad2 = gradient_energy_density_sum(grid, phi)
    return grid.cell_area * (0.5 * model.eps**2 * grad2 + float(np.sum(bulk_density)))


def total_mass(grid: GridSpec, phi: np.ndarray) -> float:
    phi = grid.check_field(phi, "phi")
    return grid.cell_area * float(np.sum(phi))
