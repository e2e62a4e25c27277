"""Pointwise scalar network ``phi -> net(phi; params)``.

Hidden layers use ``tanh``; the output layer is affine.  The forward pass is
evaluated with ``np.einsum`` (no BLAS) so that every node is computed by the
same fixed-order arithmetic whatever the batch size: a field forward equals
the node-by-node scalar forward bit for bit.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError

DEFAULT_LAYER_SIZES = (1, 20, 20, 1)
PRNG_NAME = "numpy.random.Philox"


def make_rng(seed: int) -> np.random.Generator:
    """The package-wide seeded generator (Philox, counter based)."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class MlpParams:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        _check_layer_sizes(self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeMismatchError("number of weight/bias arrays does not match layer_sizes")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            n_in, n_out = self.layer_sizes[k], self.layer_sizes[k + 1]
            if w.shape != (n_out, n_in) or b.shape != (n_out,):
                raise ShapeMismatchError(
                    f"layer {k + 1}: expected W {(n_out, n_in)} and b {(n_out,)}, got {w.shape} and {b.shape}"
                )

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def unflatten(self, vec: np.ndarray) -> MlpParams:
        """New parameters of the same architecture from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeMismatchError(f"flat vector has shape {vec.shape}, expected ({self.size},)")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[pos : pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(vec[pos : pos + b.size].copy())
            pos += b.size
        return MlpParams(self.layer_sizes, weights, biases)

    def copy(self) -> MlpParams:
        return MlpParams(self.layer_sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> MlpParams:
        return MlpParams(
            self.layer_sizes, [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases]
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(w).all() and np.isfinite(b).all() for w, b in zip(self.weights, self.biases))


# Gradients have the parameters' layout.
ParamGrad = MlpParams


def _check_layer_sizes(layer_sizes: Sequence[int]) -> None:
    if len(layer_sizes) < 2:
        raise ValueError(f"need at least input and output layers, got {tuple(layer_sizes)}")
    if layer_sizes[0] != 1 or layer_sizes[-1] != 1:
        raise ValueError(f"layer_sizes must start and end with 1, got {tuple(layer_sizes)}")
    if any(n < 1 for n in layer_sizes):
        raise ValueError(f"layer widths must be positive, got {tuple(layer_sizes)}")


def mlp_init(layer_sizes: Sequence[int] = DEFAULT_LAYER_SIZES, seed: int = 0) -> MlpParams:
    """Glorot-uniform weights and zero biases."""
    layer_sizes = tuple(int(n) for n in layer_sizes)
    _check_layer_sizes(layer_sizes)
    rng = make_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(layer_sizes, weights, biases)


def _activations(params: MlpParams, x: np.ndarray) -> list[np.ndarray]:
    # einsum without path optimisation computes every row with the same
    # reduction order, so a node's value does not depend on the batch it is in
    acts = [np.asarray(x, dtype=np.float64).reshape(-1, 1)]
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = np.einsum("nk,jk->nj", acts[-1], w, optimize=False) + b
        acts.append(z if k == last else np.tanh(z))
    return acts


def mlp_forward(params: MlpParams, x):
    """Evaluate the network pointwise; scalars in, scalars out."""
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=np.float64)
    out = _activations(params, x)[-1].reshape(x.shape)
    return float(out) if scalar else out


mlp_forward_field = mlp_forward


def mlp_forward_tape(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass that also returns the activations for ``mlp_vjp_tape``."""
    x = np.asarray(x, dtype=np.float64)
    acts = _activations(params, x)
    return acts[-1].reshape(x.shape), acts


def mlp_vjp_tape(params: MlpParams, acts: list[np.ndarray], cotangent: np.ndarray) -> tuple[np.ndarray, ParamGrad]:
    """Reverse pass over stored activations; ``dx`` has the cotangent's shape."""
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.size != acts[0].shape[0]:
        raise ShapeMismatchError(f"cotangent has {cot.size} entries, the tape {acts[0].shape[0]}")
    n_layers = len(params.weights)
    g = cot.reshape(-1, 1)
    dweights = [None] * n_layers
    dbiases = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        a_prev = acts[k]
        dweights[k] = g.T @ a_prev
        dbiases[k] = g.sum(axis=0)
        g = g @ params.weights[k]
        if k > 0:
            g = g * (1.0 - a_prev * a_prev)
    return g.reshape(cot.shape), MlpParams(params.layer_sizes, dweights, dbiases)


def mlp_vjp(params: MlpParams, x, cotangent) -> tuple[np.ndarray, ParamGrad]:
    """Pull ``cotangent`` back through the network.

    Returns ``dx`` (shape of ``x``) and the parameter gradient summed over all
    evaluation points.
    """
    x = np.asarray(x, dtype=np.float64)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != x.shape:
        raise ShapeMismatchError(f"cotangent shape {cot.shape} does not match input shape {x.shape}")
    return mlp_vjp_tape(params, _activations(params, x), cot)


def mlp_derivative(params: MlpParams, x) -> np.ndarray:
    """Derivative of the network output with respect to its input, pointwise."""
    x = np.asarray(x, dtype=np.float64)
    dx, _ = mlp_vjp(params, x, np.ones_like(x))
    return dx
