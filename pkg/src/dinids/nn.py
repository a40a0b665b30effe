"""Dense sigmoid networks with hand-written backprop.

Everything is float64. Inputs may be a single vector of shape ``(d,)`` or a
batch of row vectors ``(n, d)``; gradients are always summed over the batch,
so callers that want a mean loss scale ``output_grad`` by ``1/n`` themselves.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from dinids.errors import NumericInputError, ShapeError, StateError

ACTIVATIONS = ("sigmoid", "identity")


@dataclass(eq=False)
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str = "sigmoid"

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64, ndmin=1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("weights must be 2-D and bias 1-D")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"weights have {self.weights.shape[0]} rows but bias has length {self.bias.shape[0]}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise NumericInputError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def activate(self, z):
        return expit(z) if self.activation == "sigmoid" else z


@dataclass(eq=False)
class GradientSet:
    d_weights: list
    d_bias: list
    # gradient w.r.t. the network input, needed to chain into an upstream network
    input_grad: np.ndarray | None = None

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(
            [factor * w for w in self.d_weights],
            [factor * b for b in self.d_bias],
            None if self.input_grad is None else factor * self.input_grad,
        )

    def __add__(self, other: "GradientSet") -> "GradientSet":
        if len(self.d_weights) != len(other.d_weights):
            raise ShapeError("gradient sets belong to different networks")
        return GradientSet(
            [a + b for a, b in zip(self.d_weights, other.d_weights)],
            [a + b for a, b in zip(self.d_bias, other.d_bias)],
        )

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.d_weights, self.d_bias):
            parts.extend([w.ravel(), b.ravel()])
        return np.concatenate(parts)


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 1e-4
    batch_size: int = 512
    dropout_ratio: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be a positive integer")
        if not 0 <= self.dropout_ratio < 1:
            raise ValueError("dropout_ratio must lie in [0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(eq=False)
class DenseNetwork:
    layers: list
    cached_activations: list | None = field(default=None, repr=False, compare=False)
    _dropout_masks: list | None = field(default=None, repr=False, compare=False)
    _pre_dropout: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a network needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {i} outputs {a.out_dim} values but layer {i + 1} expects {b.in_dim}")

    @classmethod
    def initialize(cls, sizes, rng: np.random.Generator, activation="sigmoid") -> "DenseNetwork":
        """Build a network with layer widths ``sizes`` (input first).

        Weights and biases are drawn uniformly from ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``.
        """
        layers = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = rng.uniform(-bound, bound, size=fan_out)
            layers.append(DenseLayer(w, b, activation))
        return cls(layers)

    @classmethod
    def zeros(cls, sizes, activation="sigmoid") -> "DenseNetwork":
        return cls([DenseLayer(np.zeros((o, i)), np.zeros(o), activation) for i, o in zip(sizes, sizes[1:])])

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def sizes(self) -> list:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def clone(self) -> "DenseNetwork":
        return DenseNetwork(copy.deepcopy(self.layers))

    def parameters(self) -> list:
        out = []
        for layer in self.layers:
            out.extend([layer.weights, layer.bias])
        return out

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def zero_grads(self) -> GradientSet:
        return GradientSet(
            [np.zeros_like(layer.weights) for layer in self.layers],
            [np.zeros_like(layer.bias) for layer in self.layers],
        )

    def equals(self, other: "DenseNetwork") -> bool:
        """Bitwise parameter equality."""
        if self.sizes != other.sizes:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))


def _as_batch(net: DenseNetwork, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != net.in_dim:
        raise ShapeError(f"expected input with {net.in_dim} features, got shape {x.shape}")
    if not np.all(np.isfinite(batch)):
        raise NumericInputError("input contains NaN or infinite values")
    return batch, single


def forward(net: DenseNetwork, x, training=False, dropout_ratio=0.0, rng=None):
    """Run ``x`` through every layer.

    With ``training=True`` the per-layer activations are cached for
    :func:`backward`, and inverted dropout with ``dropout_ratio`` is applied to
    hidden activations (``rng`` is required when the ratio is non-zero).
    Inference never touches the network.
    """
    a, single = _as_batch(net, x)
    use_dropout = training and dropout_ratio > 0
    if use_dropout and rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    cache = [a]
    masks = []
    pres = []
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        a = layer.activate(a @ layer.weights.T + layer.bias)
        pres.append(a)
        if use_dropout and i < last:
            keep = 1.0 - dropout_ratio
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
            masks.append(mask)
        else:
            masks.append(None)
        cache.append(a)
    if training:
        net.cached_activations = cache
        net._dropout_masks = masks
        net._pre_dropout = pres
    return a[0] if single else a


def backward(net: DenseNetwork, output_grad) -> GradientSet:
    """Gradients of a scalar loss given ``dLoss/dOutput`` for the last forward pass.

    Parameters are not modified. ``input_grad`` on the result carries
    ``dLoss/dInput`` with the same shape as the forward input.
    """
    cache = net.cached_activations
    if cache is None:
        raise StateError("backward called without a preceding training-mode forward pass")
    g = np.asarray(output_grad, dtype=np.float64)
    single = g.ndim == 1
    if single:
        g = g[None, :]
    if g.shape != cache[-1].shape:
        raise ShapeError(f"output_grad has shape {g.shape}, last activation has {cache[-1].shape}")

    d_w = [None] * len(net.layers)
    d_b = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        pre = net._pre_dropout[i]
        mask = net._dropout_masks[i]
        if mask is not None:
            g = g * mask
        if layer.activation == "sigmoid":
            g = g * pre * (1.0 - pre)
        d_w[i] = g.T @ cache[i]
        d_b[i] = g.sum(axis=0)
        g = g @ layer.weights
    return GradientSet(d_w, d_b, g[0] if single else g)


def grl_backward(output_grad, lam: float):
    """Gradient reversal: identity forward, ``-lam * grad`` backward."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return -lam * np.asarray(output_grad, dtype=np.float64)


def sgd_step(net: DenseNetwork, grads: GradientSet, cfg: SgdConfig) -> DenseNetwork:
    """In-place update ``p -= learning_rate * dp``; returns ``net``."""
    if len(grads.d_weights) != len(net.layers):
        raise ShapeError("gradient set does not match network depth")
    for layer, dw, db in zip(net.layers, grads.d_weights, grads.d_bias):
        if dw.shape != layer.weights.shape or db.shape != layer.bias.shape:
            raise ShapeError("gradient shape does not match layer parameters")
    lr = cfg.learning_rate
    for layer, dw, db in zip(net.layers, grads.d_weights, grads.d_bias):
        layer.weights -= lr * dw
        layer.bias -= lr * db
    return net
