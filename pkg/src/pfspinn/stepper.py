"""Time stepping with a known bulk function and ground-truth data generation."""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset, SnapshotPair
from .errors import BlowUpError
from .grid import GridSpec, check_denominator
from .mlp import PRNG_NAME, make_rng
from .model import ModelSpec, SpectralParts

log = logging.getLogger(__name__)

SCHEMES = ("stabilized", "pc", "rk4")


class StabilizedStep:
    """One stabilized semi-implicit step of size ``delta``, diagonal in Fourier space.

    ``phi_new = D^{-1} (phi + delta * mob * (h(phi) - c_poly phi))`` with
    ``D = 1 - delta * mob * (c_poly + lg_poly)`` is written as ``a * phi_hat + b * h_hat``.
    """

    def __init__(self, parts: SpectralParts, delta: float):
        self.parts = parts
        self.delta = float(delta)
        denom = 1.0 - self.delta * parts.g * (parts.c + parts.lg)
        check_denominator(parts.grid, denom)
        self.a = (1.0 - self.delta * parts.g * parts.c) / denom
        self.b = self.delta * parts.g / denom

    def __call__(self, phi: np.ndarray, h: np.ndarray) -> np.ndarray:
        rfft2 = np.fft.rfft2
        return np.fft.irfft2(self.a * rfft2(phi) + self.b * rfft2(h), s=self.parts.grid.shape)

    def transpose(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Adjoint applied to ``w``: returns ``(d_phi_linear, d_h)``."""
        w_hat = np.fft.rfft2(w)
        shape = self.parts.grid.shape
        return np.fft.irfft2(self.a * w_hat, s=shape), np.fft.irfft2(self.b * w_hat, s=shape)


def _check_finite(x: np.ndarray, what: str, stage=None) -> np.ndarray:
    if not np.isfinite(x).all():
        raise BlowUpError(f"non-finite values in {what}", stage=stage)
    return x


def step_stabilized(grid: GridSpec, phi: np.ndarray, delta: float, model: ModelSpec) -> np.ndarray:
    phi = grid.check_field(phi, "phi")
    step = StabilizedStep(SpectralParts.build(grid, model), delta)
    return _check_finite(step(phi, model.nonlinear(phi)), "stabilized step")


def step_predictor_corrector(grid: GridSpec, phi: np.ndarray, delta: float, model: ModelSpec) -> np.ndarray:
    """Two-stage second-order step: stabilized half step, then a midpoint-linear solve."""
    phi = grid.check_field(phi, "phi")
    parts = SpectralParts.build(grid, model)
    half = StabilizedStep(parts, 0.5 * delta)
    phi_mid = _check_finite(half(phi, model.nonlinear(phi)), "predictor", stage=1)
    g, c, lg = parts.g, parts.c, parts.lg
    rfft2 = np.fft.rfft2
    denom = 1.0 - 0.5 * delta * g * (c + lg)
    num = (
        (1.0 + 0.5 * delta * g * (lg + c)) * rfft2(phi)
        + delta * g * rfft2(model.nonlinear(phi_mid))
        - delta * g * c * rfft2(phi_mid)
    )
    return _check_finite(np.fft.irfft2(num / denom, s=grid.shape), "corrector", stage=2)


def rk4_update(parts: SpectralParts, phi: np.ndarray, delta: float, nonlinear) -> np.ndarray:
    """Classical RK4 step for ``dphi/dt = model.rhs(phi, model.nonlinear(phi))``."""
    k1 = _check_finite(parts.rhs(phi, nonlinear(phi)), "rk4", stage=1)
    x = phi + (0.5 * delta) * k1
    k2 = _check_finite(parts.rhs(x, nonlinear(x)), "rk4", stage=2)
    x = phi + (0.5 * delta) * k2
    k3 = _check_finite(parts.rhs(x, nonlinear(x)), "rk4", stage=3)
    x = phi + delta * k3
    k4 = _check_finite(parts.rhs(x, nonlinear(x)), "rk4", stage=4)
    return phi + (delta / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_rk4(grid: GridSpec, phi: np.ndarray, delta: float, model: ModelSpec) -> np.ndarray:
    phi = grid.check_field(phi, "phi")
    return _check_finite(rk4_update(SpectralParts.build(grid, model), phi, delta, model.nonlinear), "rk4", stage=5)


STEPPERS = {
    "stabilized": step_stabilized,
    "pc": step_predictor_corrector,
    "rk4": step_rk4,
}


@dataclass
class SimulationPlan:
    initial: np.ndarray
    dt: float
    n_steps: int
    scheme: str = "rk4"
    record_at: Sequence[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be non-negative, got {self.n_steps}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        self.record_at = sorted(set(int(i) for i in self.record_at))
        if self.record_at and (self.record_at[0] < 0 or self.record_at[-1] > self.n_steps):
            raise ValueError("record_at indices must lie in [0, n_steps]")


def simulate(grid: GridSpec, plan: SimulationPlan, model: ModelSpec) -> list[tuple[float, np.ndarray]]:
    """Run ``plan.n_steps`` uniform steps and return ``(time, field)`` at ``record_at``."""
    phi = grid.check_field(plan.initial, "initial").astype(np.float64, copy=True)
    wanted = set(plan.record_at)
    out = []
    if 0 in wanted:
        out.append((0.0, phi.copy()))
    parts = SpectralParts.build(grid, model)
    if plan.scheme == "stabilized":
        stab = StabilizedStep(parts, plan.dt)
        advance = lambda p: _check_finite(stab(p, model.nonlinear(p)), "stabilized step")
    elif plan.scheme == "rk4":
        advance = lambda p: rk4_update(parts, p, plan.dt, model.nonlinear)
    else:
        advance = lambda p: step_predictor_corrector(grid, p, plan.dt, model)
    for n in range(1, plan.n_steps + 1):
        try:
            phi = advance(phi)
            if plan.scheme == "rk4":
                _check_finite(phi, "rk4")
        except BlowUpError as exc:
            raise BlowUpError(f"simulation blew up ({exc})", step=n, stage=exc.stage) from exc
        if n in wanted:
            out.append((n * plan.dt, phi.copy()))
    return out


# initial conditions


@dataclass(frozen=True)
class UniformRandom:
    """``offset + amplitude * rand(x)`` with ``rand`` i.i.d. uniform on [-1, 1]."""

    amplitude: float
    offset: float = 0.0

    def sample(self, grid: GridSpec, rng: np.random.Generator) -> np.ndarray:
        r = rng.uniform(-1.0, 1.0, size=grid.nx * grid.ny).reshape(grid.shape)
        return self.offset + self.amplitude * r

    def describe(self) -> dict:
        return {"kind": "random", "amplitude": self.amplitude, "offset": self.offset}


@dataclass(frozen=True)
class TanhDisk:
    """``(1 + tanh((radius - |x|) / (sqrt(2) eps))) / 2``."""

    radius: float
    eps: float

    def sample(self, grid: GridSpec, rng: np.random.Generator = None) -> np.ndarray:
        x, y = grid.mesh()
        r = np.sqrt(x**2 + y**2)
        return 0.5 * (1.0 + np.tanh((self.radius - r) / (np.sqrt(2.0) * self.eps)))

    def describe(self) -> dict:
        return {"kind": "tanhdisk", "radius": self.radius, "eps": self.eps}


def initial_condition(grid: GridSpec, init, seed: int) -> np.ndarray:
    return init.sample(grid, make_rng(seed))


def default_generator_scheme(model: ModelSpec) -> str:
    # explicit RK4 is impractical for the stiff biharmonic CH operator
    return "rk4" if model.mobility.kind == "ac" else "pc"


def _to_steps(t: float, dt: float, what: str) -> int:
    n = int(round(t / dt))
    if abs(n * dt - t) > 1e-12 * max(1.0, abs(t)):
        raise ValueError(f"{what}={t} is not a multiple of fine_dt={dt}")
    return n


def generate_dataset(
    grid: GridSpec,
    model: ModelSpec,
    init,
    fine_dt: float,
    pairs: Sequence[tuple[float, float]],
    seed: int,
    scheme: str | None = None,
    fine_stabilizer: Sequence[float] = (0.0,),
) -> Dataset:
    """Simulate one trajectory from a seeded initial condition and cut snapshot pairs from it.

    The fine solver is meant to be accurate, not robust, so by default it runs
    without a stabilizer: a stabilizer large enough for unconditional
    stability (such as ``-2 lap`` for CH) slows the interface modes by orders
    of magnitude even at small ``fine_dt``.  The semi-implicit schemes stay
    stable without it while ``fine_dt`` is below roughly ``2 eps^2 / M``.
    """
    if not pairs:
        raise ValueError("at least one (t_start, delta) pair is required")
    scheme = scheme or default_generator_scheme(model)
    fine_model = dataclasses.replace(model, stabilizer=tuple(fine_stabilizer))
    index_pairs = []
    for t0, delta in pairs:
        if not delta > 0:
            raise ValueError(f"delta must be positive, got {delta}")
        n0 = _to_steps(t0, fine_dt, "t_start")
        n1 = n0 + _to_steps(delta, fine_dt, "delta")
        index_pairs.append((n0, n1, float(delta)))
    n_steps = max(n1 for _, n1, _ in index_pairs)
    record = sorted({n for n0, n1, _ in index_pairs for n in (n0, n1)})
    phi0 = initial_condition(grid, init, seed)
    log.info("generating %d pairs: %d %s steps of %g", len(pairs), n_steps, scheme, fine_dt)
    snaps = simulate(grid, SimulationPlan(phi0, fine_dt, n_steps, scheme, record), fine_model)
    by_step = {int(round(t / fine_dt)): phi for t, phi in snaps}
    ds_pairs = [SnapshotPair(by_step[n0], by_step[n1], delta) for n0, n1, delta in index_pairs]
    meta = {
        "generator": {
            "model": model.describe(),
            "init": init.describe(),
            "seed": int(seed),
            "prng": PRNG_NAME,
            "fine_dt": fine_dt,
            "scheme": scheme,
            "fine_stabilizer": list(fine_model.stabilizer),
        },
        "t_start": [float(t0) for t0, _ in pairs],
    }
    return Dataset(grid, ds_pairs, meta)

