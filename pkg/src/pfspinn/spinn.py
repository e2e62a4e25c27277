"""Learning the bulk chemical potential from snapshot pairs.

A network replaces ``f`` inside a numerical time-stepping map; the
loss compares the mapped first snapshot with the second.  Gradients are exact
reverse-mode derivatives through every substep.  All spectral operators are
real even Fourier multipliers, so their adjoints are themselves.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .dataio import Dataset
from .errors import BlowUpError, DomainError, NonFiniteLossError
from .grid import GridSpec
from .mlp import (
    DEFAULT_LAYER_SIZES,
    PRNG_NAME,
    MlpParams,
    mlp_forward,
    mlp_forward_tape,
    mlp_init,
    mlp_vjp,
    mlp_vjp_tape,
)
from .model import FloryHuggins, Learned, ModelSpec, SpectralParts, ZeroBulk
from .stepper import StabilizedStep, rk4_update

log = logging.getLogger(__name__)

FAMILIES = ("linear", "rk4")


@dataclass(frozen=True)
class LossVariant:
    family: str = "linear"
    K: int = 1
    anchor_weight: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"loss family must be one of {FAMILIES}, got {self.family!r}")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"recursion depth K must be a positive integer, got {self.K}")
        if not self.anchor_weight >= 0:
            raise ValueError(f"anchor weight must be >= 0, got {self.anchor_weight}")


def with_bulk(model: ModelSpec, theta) -> ModelSpec:
    """Model with ``theta`` as its bulk: network parameters or any bulk object."""
    bulk = Learned(theta) if isinstance(theta, MlpParams) else theta
    return dataclasses.replace(model, bulk=bulk)


# forward maps


def map_linear(grid: GridSpec, phi1: np.ndarray, delta: float, K: int, model: ModelSpec) -> np.ndarray:
    """K stabilized substeps of size ``delta / K``."""
    step = StabilizedStep(SpectralParts.build(grid, model), delta / K)
    r = grid.check_field(phi1, "phi1")
    for j in range(1, K + 1):
        r = step(r, model.nonlinear(r))
        if not np.isfinite(r).all():
            raise BlowUpError("non-finite state in linear map", step=j)
    return r


def map_rk4(grid: GridSpec, phi1: np.ndarray, delta: float, K: int, model: ModelSpec) -> np.ndarray:
    """K classical RK4 substeps of size ``delta / K``."""
    parts = SpectralParts.build(grid, model)
    r = grid.check_field(phi1, "phi1")
    d = delta / K
    for j in range(1, K + 1):
        try:
            r = rk4_update(parts, r, d, model.nonlinear)
        except BlowUpError as exc:
            raise BlowUpError("non-finite stage in RK4 map", step=j, stage=exc.stage) from exc
        if not np.isfinite(r).all():
            raise BlowUpError("non-finite state in RK4 map", step=j)
    return r


MAPS = {"linear": map_linear, "rk4": map_rk4}


def spinn_map(grid, phi1, delta, variant: LossVariant, model) -> np.ndarray:
    return MAPS[variant.family](grid, phi1, delta, variant.K, model)


# losses


def _anchor_value(model: ModelSpec) -> float:
    return float(np.asarray(model.bulk(np.zeros(1)))[0])


def data_count(data: Dataset) -> int:
    """Number of compared values ``N * nx * ny``, or 1 for an empty dataset."""
    return max(1, len(data.pairs) * data.grid.nx * data.grid.ny)


def loss(theta, data: Dataset, variant: LossVariant, model: ModelSpec) -> float:
    """Plain sum of squared mismatches plus ``mu`` times the squared value at 0, divided by ``data_count``.

    The data part is thus the mean over pairs of the per-node mean squared
    mismatch.  The anchor is divided by the same count so that ``mu`` keeps its
    meaning on the sum-of-squares scale and the minimiser does not depend on
    the grid size or the number of pairs.
    ``theta`` is network parameters or, for oracle checks, a bulk object.
    """
    m = with_bulk(model, theta)
    total = 0.0
    for i, pair in enumerate(data.pairs):
        try:
            pred = spinn_map(data.grid, pair.phi1, pair.delta, variant, m)
        except BlowUpError as exc:
            raise BlowUpError(f"pair {i}: {exc}", step=exc.step, stage=exc.stage) from exc
        total += float(np.mean((pair.phi2 - pred) ** 2))
    if data.pairs:
        total /= len(data.pairs)
    if variant.anchor_weight:
        total += variant.anchor_weight * _anchor_value(m) ** 2 / data_count(data)
    return total


class _Pointwise:
    """Evaluates ``ng`` plus the network and pulls cotangents back through both."""

    def __init__(self, params: MlpParams, ng):
        self.params = params
        self.ng = None if isinstance(ng, ZeroBulk) else ng
        self.grad = np.zeros(params.size)

    def __call__(self, x):
        """``(h, tape)``; the tape is handed back to ``pullback``."""
        h, acts = mlp_forward_tape(self.params, x)
        if self.ng is not None:
            h = h + self.ng(x)
        return h, (x, acts)

    def pullback(self, tape, dh):
        x, acts = tape
        dx, dtheta = mlp_vjp_tape(self.params, acts, dh)
        self.grad += dtheta.flatten()
        if self.ng is not None:
            dx = dx + self.ng.derivative(x) * dh
        return dx


def _linear_pair_grad(grid, phi1, delta, K, parts, pw: _Pointwise, residual_weight, phi2):
    step = StabilizedStep(parts, delta / K)
    tapes = []
    r = phi1
    for j in range(1, K + 1):
        h, tape = pw(r)
        r = step(r, h)
        if not np.isfinite(r).all():
            raise BlowUpError("non-finite state in linear map", step=j)
        tapes.append(tape)
    res = phi2 - r
    value = float(np.mean(res**2))
    v = -residual_weight * res
    for tape in reversed(tapes):
        d_lin, d_h = step.transpose(v)
        v = d_lin + pw.pullback(tape, d_h)
    return value


def _rk4_pair_grad(grid, phi1, delta, K, parts, pw: _Pointwise, residual_weight, phi2):
    d = delta / K
    stages = []
    r = phi1

    def rhs(x):
        h, tape = pw(x)
        return parts.rhs(x, h), tape

    for j in range(1, K + 1):
        k1, t1 = rhs(r)
        k2, t2 = rhs(r + (0.5 * d) * k1)
        k3, t3 = rhs(r + (0.5 * d) * k2)
        k4, t4 = rhs(r + d * k3)
        r = r + (d / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(r).all():
            raise BlowUpError("non-finite state in RK4 map", step=j)
        stages.append((t1, t2, t3, t4))
    res = phi2 - r
    value = float(np.mean(res**2))

    def rhs_pullback(tape, gk):
        d_lin, d_h = parts.rhs_transpose(gk)
        return d_lin + pw.pullback(tape, d_h)

    v = -residual_weight * res
    for t1, t2, t3, t4 in reversed(stages):
        gk1 = (d / 6.0) * v
        gk2 = (d / 3.0) * v
        gk3 = (d / 3.0) * v
        gx4 = rhs_pullback(t4, (d / 6.0) * v)
        gk3 = gk3 + d * gx4
        gx3 = rhs_pullback(t3, gk3)
        gk2 = gk2 + (0.5 * d) * gx3
        gx2 = rhs_pullback(t2, gk2)
        gk1 = gk1 + (0.5 * d) * gx2
        gx1 = rhs_pullback(t1, gk1)
        v = v + gx1 + gx2 + gx3 + gx4
    return value


_PAIR_GRAD = {"linear": _linear_pair_grad, "rk4": _rk4_pair_grad}


def loss_and_grad_flat(theta: MlpParams, data: Dataset, variant: LossVariant, model: ModelSpec):
    """``(loss, flat gradient)``; the gradient follows ``MlpParams.flatten`` order."""
    parts = SpectralParts.build(data.grid, model)
    pw = _Pointwise(theta, model.ng)
    n_pairs = len(data.pairs)
    total = 0.0
    if n_pairs:
        weight = 2.0 / (n_pairs * data.grid.nx * data.grid.ny)
        pair_grad = _PAIR_GRAD[variant.family]
        for i, pair in enumerate(data.pairs):
            try:
                total += pair_grad(data.grid, pair.phi1, pair.delta, variant.K, parts, pw, weight, pair.phi2)
            except BlowUpError as exc:
                raise BlowUpError(f"pair {i}: {exc}", step=exc.step, stage=exc.stage) from exc
        total /= n_pairs
    if variant.anchor_weight:
        mu = variant.anchor_weight / data_count(data)
        zero = np.zeros(1)
        n0 = mlp_forward(theta, zero)
        total += mu * float(n0[0]) ** 2
        _, dtheta = mlp_vjp(theta, zero, 2.0 * mu * n0)
        pw.grad += dtheta.flatten()
    return total, pw.grad


def loss_and_grad(theta: MlpParams, data: Dataset, variant: LossVariant, model: ModelSpec):
    value, flat = loss_and_grad_flat(theta, data, variant, model)
    return value, theta.unflatten(flat)


# training


@dataclass
class TrainConfig:
    variant: LossVariant = field(default_factory=LossVariant)
    adam_iters: int = 10000
    adam_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lbfgs_enabled: bool = True
    lbfgs_max_iters: int = 5000
    lbfgs_grad_tol: float = 1e-9
    lbfgs_history: int = 10
    seed: int = 0
    layer_sizes: tuple = DEFAULT_LAYER_SIZES

    def __post_init__(self):
        if self.adam_iters < 0 or self.lbfgs_max_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if not (self.adam_lr > 0 and self.lbfgs_grad_tol > 0 and self.adam_eps > 0):
            raise ValueError("learning rate and tolerances must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam moment coefficients must lie in [0, 1)")
        if self.lbfgs_history < 1:
            raise ValueError("L-BFGS history must be >= 1")

    def describe(self) -> dict:
        d = dataclasses.asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        d["prng"] = PRNG_NAME
        return d


@dataclass
class TrainReport:
    final_params: MlpParams
    loss_history: list
    wall_time: float
    adam_iters_run: int
    lbfgs_iters_run: int
    lbfgs_message: str
    meta: dict


def train(
    data: Dataset,
    model: ModelSpec,
    config: TrainConfig,
    init_params: MlpParams | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> TrainReport:
    """Full-batch Adam followed by unconstrained L-BFGS."""
    if not data.pairs:
        raise ValueError("training needs at least one snapshot pair")
    params = init_params.copy() if init_params is not None else mlp_init(config.layer_sizes, config.seed)
    variant = config.variant
    history = []
    t0 = time.perf_counter()

    x = params.flatten()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2 = config.adam_beta1, config.adam_beta2
    for it in range(1, config.adam_iters + 1):
        try:
            value, g = loss_and_grad_flat(params.unflatten(x), data, variant, model)
        except BlowUpError:
            value, g = np.nan, None
        if not (np.isfinite(value) and np.isfinite(g).all()):
            raise NonFiniteLossError(it, params.unflatten(x))
        history.append(value)
        if progress is not None:
            progress(it, value)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**it)
        v_hat = v / (1.0 - b2**it)
        x = x - config.adam_lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)

    lbfgs_iters, message = 0, "disabled"
    if config.lbfgs_enabled and config.lbfgs_max_iters > 0:
        x, lbfgs_iters, message = _run_lbfgs(x, params, data, variant, model, config, history, progress)

    return TrainReport(
        final_params=params.unflatten(x),
        loss_history=history,
        wall_time=time.perf_counter() - t0,
        adam_iters_run=config.adam_iters,
        lbfgs_iters_run=lbfgs_iters,
        lbfgs_message=message,
        meta={"config": config.describe(), "model": model.describe(), "dataset": data.meta},
    )


class _TrialBlowUp(Exception):
    pass


def _run_lbfgs(x0, template, data, variant, model, config, history, progress):
    """L-BFGS (scipy's L-BFGS-B without bounds, i.e. plain L-BFGS with a Wolfe line search)."""
    best = {"x": x0.copy(), "f": np.inf}
    evaluated = {}

    def fun(x):
        try:
            value, g = loss_and_grad_flat(template.unflatten(x), data, variant, model)
        except BlowUpError as exc:
            raise _TrialBlowUp() from exc
        if not (np.isfinite(value) and np.isfinite(g).all()):
            raise _TrialBlowUp()
        evaluated[x.tobytes()] = value
        if value < best["f"]:
            best["x"], best["f"] = x.copy(), value
        return value, g

    start = len(history)

    def callback(xk, *args):
        value = evaluated.get(np.asarray(xk).tobytes(), best["f"])
        history.append(value)
        if progress is not None:
            progress(len(history), value)

    try:
        res = minimize(
            fun,
            x0,
            jac=True,
            method="L-BFGS-B",
            callback=callback,
            options={
                "maxiter": config.lbfgs_max_iters,
                "maxfun": 4 * config.lbfgs_max_iters + 100,
                "maxcor": config.lbfgs_history,
                "gtol": config.lbfgs_grad_tol,
                "ftol": 0.0,
            },
        )
        x, message = res.x, str(res.message)
        if not (evaluated.get(x.tobytes(), np.inf) <= best["f"]):
            x = best["x"]
    except _TrialBlowUp:
        log.warning("L-BFGS trial point blew up; keeping the best iterate")
        x, message = best["x"], "stopped: non-finite trial point"
    return x, len(history) - start, message


# evaluation


@dataclass
class ErrorReport:
    phi: np.ndarray
    learned: np.ndarray
    truth: np.ndarray | None
    linf: float | None
    l2: float | None
    data_phi_range: tuple | None = None

    def summary(self) -> dict:
        return {"linf": self.linf, "l2": self.l2, "data_phi_range": self.data_phi_range}


def evaluate_f(theta, truth, phi_grid: Sequence, data_phi_range=None) -> ErrorReport:
    """Sample the learned and true bulk functions on ``phi_grid = (lo, hi, n)``.

    ``l2`` is the root-mean-square difference over the samples.
    """
    lo, hi, n = phi_grid
    n = int(n)
    if n < 2 or not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise ValueError(f"need a finite range lo < hi with >= 2 points, got {phi_grid}")
    phi = np.linspace(lo, hi, n)
    learned_fn = Learned(theta) if isinstance(theta, MlpParams) else theta
    learned = np.asarray(learned_fn(phi), dtype=np.float64)
    if truth is None:
        return ErrorReport(phi, learned, None, None, None, data_phi_range)
    if isinstance(truth, FloryHuggins) and (lo <= 0.0 or hi >= 1.0):
        raise DomainError(f"Flory-Huggins truth needs a range inside (0, 1), got [{lo}, {hi}]")
    true = np.asarray(truth(phi), dtype=np.float64)
    diff = learned - true
    return ErrorReport(
        phi,
        learned,
        true,
        float(np.max(np.abs(diff))),
        float(np.sqrt(np.mean(diff**2))),
        data_phi_range,
    )
